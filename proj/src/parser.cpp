/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/
#include "streamsql/parser.hpp"

#include <cstdlib>

#include "streamsql/lexer.hpp"

namespace streamsql {

namespace {

class Parser {
 public:
  explicit Parser(const std::string& sql) : tokens_(lex(sql)) {}

  std::vector<StatementPtr> parse_all() {
    std::vector<StatementPtr> out;
    while (!at_end()) {
      if (accept_punct(";")) continue;
      out.push_back(statement());
      if (!at_end()) expect_punct(";");
    }
    return out;
  }

 private:
  std::vector<Token> tokens_;
  size_t pos_ = 0;
  // Set while parsing the relation argument of CHANGES; gates ORDER BY/LIMIT.
  int changes_depth_ = 0;

  const Token& cur() const { return tokens_[pos_]; }
  const Token& peek(size_t n = 1) const {
    size_t i = pos_ + n;
    return i < tokens_.size() ? tokens_[i] : tokens_.back();
  }
  bool at_end() const { return cur().kind == Token::Kind::End; }

  [[noreturn]] void fail(const std::string& msg) const {
    raise(ErrorCode::SyntaxError,
          std::to_string(cur().line) + ":" + std::to_string(cur().col) + ": " + msg);
  }

  bool is_kw(const char* kw) const {
    return cur().kind == Token::Kind::Ident && cur().upper == kw;
  }
  bool is_kw(size_t n, const char* kw) const {
    return peek(n).kind == Token::Kind::Ident && peek(n).upper == kw;
  }
  bool accept_kw(const char* kw) {
    if (!is_kw(kw)) return false;
    ++pos_;
    return true;
  }
  void expect_kw(const char* kw) {
    if (!accept_kw(kw)) fail(std::string("expected ") + kw + ", found '" + cur().text + "'");
  }
  bool is_punct(const char* p) const {
    return cur().kind == Token::Kind::Punct && cur().text == p;
  }
  bool accept_punct(const char* p) {
    if (!is_punct(p)) return false;
    ++pos_;
    return true;
  }
  void expect_punct(const char* p) {
    if (!accept_punct(p)) fail(std::string("expected '") + p + "', found '" + cur().text + "'");
  }
  std::string ident() {
    if (cur().kind != Token::Kind::Ident) fail("expected identifier, found '" + cur().text + "'");
    std::string s = cur().text;
    ++pos_;
    return s;
  }
  int64_t integer_lit() {
    if (cur().kind != Token::Kind::Number) fail("expected number, found '" + cur().text + "'");
    int64_t v = std::strtoll(cur().text.c_str(), nullptr, 10);
    ++pos_;
    return v;
  }

  // ---- statements ---------------------------------------------------------

  StatementPtr statement() {
    if (is_kw("SELECT") || is_kw("WITH") || is_kw("FINAL") || is_punct("(")) {
      auto s = std::make_shared<Statement>();
      s->kind = Statement::Kind::Select;
      s->query = query();
      return s;
    }
    if (is_kw("INSERT")) return insert_stmt();
    if (is_kw("UPDATE")) return update_stmt();
    if (is_kw("DELETE")) return delete_stmt();
    if (is_kw("MERGE")) fail("MERGE is supported only as a task body (CREATE TASK ... AS MERGE)");
    if (is_kw("BEGIN")) {
      ++pos_;
      accept_kw("TRANSACTION") || accept_kw("WORK");
      return simple(Statement::Kind::Begin);
    }
    if (is_kw("COMMIT")) {
      ++pos_;
      accept_kw("WORK");
      return simple(Statement::Kind::Commit);
    }
    if (is_kw("ROLLBACK")) {
      ++pos_;
      accept_kw("WORK");
      return simple(Statement::Kind::Rollback);
    }
    if (is_kw("CREATE")) {
      if (is_kw(1, "TABLE")) return create_table();
      if (is_kw(1, "TASK") || (is_kw(1, "CONTINUOUS") && is_kw(2, "TASK"))) return create_task();
      if (is_kw(1, "CONTINUOUS") && is_kw(2, "CURSOR")) {
        ++pos_;
        return cursor_decl();
      }
      fail("expected TABLE, TASK or CONTINUOUS CURSOR after CREATE");
    }
    if (is_kw("CONTINUOUS") && is_kw(1, "CURSOR")) return cursor_decl();
    if (is_kw("ALTER")) {
      if (is_kw(1, "TABLE")) return alter_table();
      if (is_kw(1, "TASK")) return alter_task();
      fail("expected TABLE or TASK after ALTER");
    }
    if (is_kw("DROP")) {
      if (is_kw(1, "TASK")) {
        pos_ += 2;
        auto s = simple(Statement::Kind::DropTask);
        s->task_name = ident();
        return s;
      }
      fail("only DROP TASK is supported");
    }
    if (is_kw("EXECUTE")) {
      ++pos_;
      expect_kw("TASK");
      auto s = simple(Statement::Kind::ExecuteTask);
      s->task_name = ident();
      return s;
    }
    if (is_kw("OPEN")) {
      ++pos_;
      auto s = simple(Statement::Kind::OpenCursor);
      s->cursor_name = ident();
      return s;
    }
    if (is_kw("CLOSE")) {
      ++pos_;
      auto s = simple(Statement::Kind::CloseCursor);
      s->cursor_name = ident();
      return s;
    }
    if (is_kw("FETCH")) {
      ++pos_;
      auto s = simple(Statement::Kind::FetchCursor);
      accept_kw("NEXT");
      if (cur().kind == Token::Kind::Number) s->fetch_count = integer_lit();
      expect_kw("FROM");
      s->cursor_name = ident();
      return s;
    }
    if (is_kw("SUBSCRIBE")) {
      ++pos_;
      expect_kw("TO");
      auto s = simple(Statement::Kind::Subscribe);
      s->query = query();
      if (!at_end() && !is_punct(";")) s->schedule_present = parse_schedule(s->schedule);
      return s;
    }
    if (is_kw("SET")) {
      ++pos_;
      auto s = simple(Statement::Kind::Set);
      s->set_name = to_upper(ident());
      expect_punct("=");
      s->set_value = to_upper(ident());
      return s;
    }
    fail("unexpected token '" + cur().text + "' at start of statement");
  }

  StatementPtr simple(Statement::Kind k) {
    auto s = std::make_shared<Statement>();
    s->kind = k;
    return s;
  }

  StatementPtr insert_stmt() {
    expect_kw("INSERT");
    expect_kw("INTO");
    auto s = simple(Statement::Kind::Insert);
    s->table = ident();
    if (is_punct("(") && peek(1).kind == Token::Kind::Ident &&
        (peek(2).kind == Token::Kind::Punct &&
         (peek(2).text == "," || peek(2).text == ")"))) {
      expect_punct("(");
      s->columns.push_back(ident());
      while (accept_punct(",")) s->columns.push_back(ident());
      expect_punct(")");
    }
    if (accept_kw("VALUES")) {
      do {
        expect_punct("(");
        std::vector<ExprPtr> row;
        row.push_back(expr());
        while (accept_punct(",")) row.push_back(expr());
        expect_punct(")");
        s->values_rows.push_back(std::move(row));
      } while (accept_punct(","));
    } else {
      s->query = query();
    }
    return s;
  }

  StatementPtr update_stmt() {
    expect_kw("UPDATE");
    auto s = simple(Statement::Kind::Update);
    s->table = ident();
    expect_kw("SET");
    do {
      std::string col = ident();
      if (accept_punct(".")) col = ident();  // tolerate table-qualified targets
      expect_punct("=");
      s->assignments.emplace_back(col, expr());
    } while (accept_punct(","));
    if (accept_kw("WHERE")) s->where = expr();
    return s;
  }

  StatementPtr delete_stmt() {
    expect_kw("DELETE");
    expect_kw("FROM");
    auto s = simple(Statement::Kind::Delete);
    s->table = ident();
    if (accept_kw("WHERE")) s->where = expr();
    return s;
  }

  ColumnType column_type() {
    std::string t = to_upper(ident());
    auto skip_len = [&] {
      if (accept_punct("(")) {
        integer_lit();
        if (accept_punct(",")) integer_lit();
        expect_punct(")");
      }
    };
    if (t == "VARCHAR" || t == "TEXT" || t == "CHAR" || t == "STRING") {
      skip_len();
      return ColumnType::Text;
    }
    if (t == "INTEGER" || t == "INT" || t == "BIGINT") return ColumnType::Int;
    if (t == "NUMBER" || t == "NUMERIC" || t == "DECIMAL") {
      skip_len();
      return ColumnType::Number;
    }
    if (t == "DATE") return ColumnType::Date;
    if (t == "TIMESTAMP") return ColumnType::Timestamp;
    if (t == "BOOLEAN" || t == "BOOL") return ColumnType::Bool;
    fail("unknown column type '" + t + "'");
  }

  StatementPtr create_table() {
    pos_ += 2;  // CREATE TABLE
    auto s = simple(Statement::Kind::CreateTable);
    s->table = ident();
    expect_punct("(");
    while (true) {
      if (is_kw("INSERT") && is_kw(1, "ONLY")) {
        pos_ += 2;
        s->insert_only = true;
      } else {
        ColumnDef col;
        col.name = ident();
        col.type = column_type();
        s->table_columns.push_back(col);
      }
      if (!accept_punct(",")) break;
    }
    expect_punct(")");
    if (is_kw("INSERT") && is_kw(1, "ONLY")) {
      pos_ += 2;
      s->insert_only = true;
    }
    if (accept_kw("EXPIRE")) {
      expect_kw("WHERE");
      s->expire_where = expr();
    }
    return s;
  }

  void constraint_state_tokens(Statement& s) {
    while (true) {
      if (accept_kw("ENABLED") || accept_kw("ENABLE")) {
        s.constraint_state.enabled = true;
      } else if (accept_kw("DISABLED") || accept_kw("DISABLE")) {
        s.constraint_state.enabled = false;
      } else if (accept_kw("DEFERRED")) {
        s.constraint_state.deferred = true;
      } else if (accept_kw("IMMEDIATE")) {
        s.constraint_state.deferred = false;
      } else if (accept_kw("RELY")) {
        s.constraint_state.rely = true;
      } else if (accept_kw("NORELY") || accept_kw("NONRELY")) {
        s.constraint_state.rely = false;
      } else if (is_kw("VALIDATE") || is_kw("NOVALIDATE") || is_kw("NONVALIDATE")) {
        fail("VALIDATE/NOVALIDATE is not available for increasing constraints; past data "
             "cannot be re-checked");
      } else {
        break;
      }
    }
  }

  StatementPtr alter_table() {
    pos_ += 2;  // ALTER TABLE
    auto s = simple(Statement::Kind::AlterTable);
    s->table = ident();
    if (is_kw("INSERT") && is_kw(1, "ONLY")) {
      pos_ += 2;
      s->alter_verb = Statement::AlterVerb::InsertOnly;
      return s;
    }
    if (is_kw("DROP") && is_kw(1, "INSERT") && is_kw(2, "ONLY")) {
      pos_ += 3;
      s->alter_verb = Statement::AlterVerb::DropInsertOnly;
      return s;
    }
    if (accept_kw("CONSTRAINT")) {
      s->alter_verb = Statement::AlterVerb::AddIncreasing;
      if (accept_kw("STRICTLY")) s->strictly = true;
      expect_kw("INCREASING");
      s->constraint_column = ident();
      if (accept_kw("GRACE")) s->grace = expr();
      constraint_state_tokens(*s);
      return s;
    }
    if (accept_kw("FINALIZE")) {
      s->alter_verb = Statement::AlterVerb::Finalize;
      accept_kw("WHERE");
      s->predicate = expr();
      return s;
    }
    if (accept_kw("ADD")) {
      expect_kw("EXPIRE");
      expect_kw("WHERE");
      s->alter_verb = Statement::AlterVerb::AddExpire;
      s->predicate = expr();
      return s;
    }
    if (accept_kw("MODIFY")) {
      expect_kw("EXPIRE");
      expect_kw("WHERE");
      s->alter_verb = Statement::AlterVerb::ModifyExpire;
      s->predicate = expr();
      return s;
    }
    if (accept_kw("DROP")) {
      expect_kw("EXPIRE");
      s->alter_verb = Statement::AlterVerb::DropExpire;
      return s;
    }
    fail("unsupported ALTER TABLE clause at '" + cur().text + "'");
  }

  bool parse_schedule(Schedule& sched) {
    bool any = false;
    while (true) {
      if (is_kw("ON") && is_kw(1, "COMMIT")) {
        pos_ += 2;
        ScheduleTrigger t;
        t.kind = ScheduleTrigger::Kind::OnCommit;
        if (accept_kw("ASYNCHRONOUSLY") || accept_kw("ASYNCHRONOUS")) t.asynchronous = true;
        if (accept_kw("ON")) {
          t.tables.push_back(ident());
          while (accept_punct(",")) t.tables.push_back(ident());
          if (accept_kw("ASYNCHRONOUSLY") || accept_kw("ASYNCHRONOUS")) t.asynchronous = true;
        }
        sched.triggers.push_back(t);
        any = true;
        continue;
      }
      if (is_kw("COMMIT") &&
          (is_kw(1, "ASYNCHRONOUSLY") || is_kw(1, "ASYNCHRONOUS") || is_kw(1, "ON"))) {
        ++pos_;
        ScheduleTrigger t;
        t.kind = ScheduleTrigger::Kind::OnCommit;
        if (accept_kw("ASYNCHRONOUSLY") || accept_kw("ASYNCHRONOUS")) t.asynchronous = true;
        if (accept_kw("ON")) {
          t.tables.push_back(ident());
          while (accept_punct(",")) t.tables.push_back(ident());
          if (accept_kw("ASYNCHRONOUSLY") || accept_kw("ASYNCHRONOUS")) t.asynchronous = true;
        }
        sched.triggers.push_back(t);
        any = true;
        continue;
      }
      if (accept_kw("PERIODIC")) {
        expect_kw("EVERY");
        int64_t n = integer_lit();
        auto unit = parse_interval_unit(ident());
        if (!unit) fail("unknown interval unit in PERIODIC schedule");
        ScheduleTrigger t;
        t.kind = ScheduleTrigger::Kind::Periodic;
        t.period_secs = n * interval_unit_seconds(*unit);
        sched.triggers.push_back(t);
        any = true;
        continue;
      }
      if ((is_kw("ON") && is_kw(1, "DEMAND"))) {
        pos_ += 2;
        ScheduleTrigger t;
        t.kind = ScheduleTrigger::Kind::OnDemand;
        sched.triggers.push_back(t);
        any = true;
        continue;
      }
      if (is_kw("DEMAND")) {
        ++pos_;
        ScheduleTrigger t;
        t.kind = ScheduleTrigger::Kind::OnDemand;
        sched.triggers.push_back(t);
        any = true;
        continue;
      }
      if (is_kw("END") && is_kw(1, "COUNT")) {
        pos_ += 2;
        sched.end_count = integer_lit();
        any = true;
        continue;
      }
      if (is_kw("END") && is_kw(1, "TIME")) {
        pos_ += 2;
        sched.end_time = expr_primary();
        any = true;
        continue;
      }
      break;
    }
    return any;
  }

  void error_logging_clause(Statement& s) {
    if (is_kw("LOG") && is_kw(1, "ERRORS")) {
      pos_ += 2;
      s.error_policy.log_errors = true;
      if (accept_kw("INTO")) s.error_policy.log_table = ident();
      if (accept_kw("REJECT")) {
        expect_kw("LIMIT");
        s.error_policy.reject_limit = integer_lit();
      }
      if (accept_kw("RETRY")) {
        expect_kw("LIMIT");
        s.error_policy.retry_limit = integer_lit();
      }
    }
    if (is_kw("WITH") && is_kw(1, "INITIAL") && is_kw(2, "SNAPSHOT")) {
      pos_ += 3;
      s.initial_snapshot = true;
    }
  }

  StatementPtr create_task() {
    ++pos_;  // CREATE
    bool continuous = accept_kw("CONTINUOUS");
    expect_kw("TASK");
    auto s = simple(Statement::Kind::CreateTask);
    s->task_name = ident();
    s->schedule_present = parse_schedule(s->schedule);
    expect_kw("AS");
    if (is_kw("INSERT")) {
      ++pos_;
      expect_kw("INTO");
      s->task_action = Statement::TaskAction::InsertSelect;
      s->task_target = ident();
      if (is_punct("(") && !is_kw(1, "SELECT")) {  // optional column list
        expect_punct("(");
        s->columns.push_back(ident());
        while (accept_punct(",")) s->columns.push_back(ident());
        expect_punct(")");
      }
      s->query = query();
    } else if (is_kw("MERGE")) {
      ++pos_;
      expect_kw("INTO");
      s->task_action = Statement::TaskAction::Merge;
      s->merge = std::make_shared<MergeAction>();
      s->merge->target = ident();
      s->task_target = s->merge->target;
      expect_kw("USING");
      expect_punct("(");
      s->merge->source = query();
      expect_punct(")");
      if (cur().kind == Token::Kind::Ident && !is_kw("ON")) s->merge->source_alias = ident();
      expect_kw("ON");
      s->merge->on = expr();
      expect_kw("WHEN");
      expect_kw("MATCHED");
      expect_kw("THEN");
      expect_kw("UPDATE");
      expect_kw("SET");
      do {
        std::string col = ident();
        if (accept_punct(".")) col = ident();
        expect_punct("=");
        s->merge->update_set.emplace_back(col, expr());
      } while (accept_punct(","));
      if (accept_kw("DELETE")) {
        expect_kw("WHERE");
        s->merge->delete_where = expr();
      }
      expect_kw("WHEN");
      expect_kw("NOT");
      expect_kw("MATCHED");
      expect_kw("THEN");
      expect_kw("INSERT");
      expect_punct("(");
      do {
        std::string col = ident();
        if (accept_punct(".")) col = ident();
        s->merge->insert_columns.push_back(col);
      } while (accept_punct(","));
      expect_punct(")");
      expect_kw("VALUES");
      expect_punct("(");
      do {
        s->merge->insert_values.push_back(expr());
      } while (accept_punct(","));
      expect_punct(")");
    } else if (is_kw("APPLY")) {
      ++pos_;
      expect_kw("CHANGES");
      expect_kw("USING");
      s->task_action = Statement::TaskAction::ApplyChanges;
      s->query = query();
      expect_kw("TO");
      s->task_target = ident();
    } else {
      fail("expected INSERT, MERGE or APPLY CHANGES in task body");
    }
    error_logging_clause(*s);
    if (continuous) mark_continuous(s->query ? s->query : (s->merge ? s->merge->source : nullptr));
    return s;
  }

  static void mark_continuous(const QueryPtr& q) {
    if (!q) return;
    if (q->spec) q->spec->continuous = true;
    mark_continuous(q->left);
  }

  StatementPtr alter_task() {
    pos_ += 2;  // ALTER TASK
    auto s = simple(Statement::Kind::AlterTask);
    s->task_name = ident();
    if (accept_kw("PAUSE"))
      s->task_verb = Statement::TaskVerb::Pause;
    else if (accept_kw("RESUME"))
      s->task_verb = Statement::TaskVerb::Resume;
    else if (accept_kw("STOP"))
      s->task_verb = Statement::TaskVerb::Stop;
    else
      fail("expected PAUSE, RESUME or STOP");
    return s;
  }

  StatementPtr cursor_decl() {
    expect_kw("CONTINUOUS");
    expect_kw("CURSOR");
    auto s = simple(Statement::Kind::DeclareCursor);
    s->cursor_name = ident();
    if (!accept_kw("AS") && !accept_kw("IS"))
      fail("expected AS or IS after cursor name");
    // WITHOUT RETURN / WITH RETURN: parsed, ignored.
    s->query = query();
    return s;
  }

  // ---- queries ------------------------------------------------------------

  QueryPtr query() {
    auto q = std::make_shared<QueryExpr>();
    std::vector<std::pair<std::string, QueryPtr>> ctes;
    if (accept_kw("WITH")) {
      do {
        std::string name = ident();
        expect_kw("AS");
        expect_punct("(");
        ctes.emplace_back(name, query());
        expect_punct(")");
      } while (accept_punct(","));
    }
    QueryPtr body = query_body();
    body->ctes = std::move(ctes);
    return body;
  }

  QueryPtr query_body() {
    QueryPtr left = query_term();
    while (true) {
      if (is_kw("UNION")) {
        ++pos_;
        bool all = accept_kw("ALL");
        auto q = std::make_shared<QueryExpr>();
        q->kind = QueryExpr::Kind::Union;
        q->union_all = all;
        q->left = left;
        q->right = query_term();
        left = q;
      } else if (is_kw("INTERSECT")) {
        ++pos_;
        auto q = std::make_shared<QueryExpr>();
        q->kind = QueryExpr::Kind::Intersect;
        q->left = left;
        q->right = query_term();
        left = q;
      } else {
        break;
      }
    }
    return left;
  }

  QueryPtr query_term() {
    if (is_kw("FINAL") && peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
      pos_ += 2;
      auto q = std::make_shared<QueryExpr>();
      q->kind = QueryExpr::Kind::Final;
      q->left = query();
      expect_punct(")");
      return q;
    }
    if (is_punct("(")) {
      ++pos_;
      QueryPtr q = query();
      expect_punct(")");
      return q;
    }
    return select_spec();
  }

  QueryPtr select_spec() {
    expect_kw("SELECT");
    auto spec = std::make_shared<QuerySpec>();
    bool final_prefix = false;
    while (true) {
      if (accept_kw("CONTINUOUS")) {
        spec->continuous = true;
        continue;
      }
      // SELECT FINAL <list>: FINAL is a prefix only when not itself a column
      // expression like FINAL(...) handled at query_term level.
      if (is_kw("FINAL") && !(peek(1).kind == Token::Kind::Punct && peek(1).text == "(")) {
        ++pos_;
        final_prefix = true;
        continue;
      }
      break;
    }
    // select list
    do {
      SelectItem item;
      if (is_punct("*")) {
        ++pos_;
        item.star = true;
      } else if (cur().kind == Token::Kind::Ident && peek(1).kind == Token::Kind::Punct &&
                 peek(1).text == "." && peek(2).kind == Token::Kind::Punct &&
                 peek(2).text == "*") {
        item.star = true;
        item.star_qualifier = ident();
        pos_ += 2;
      } else {
        item.expr = expr();
        if (accept_kw("AS")) {
          item.alias = ident();
        } else if (cur().kind == Token::Kind::Ident && !reserved_after_select_item()) {
          item.alias = ident();
        }
      }
      spec->items.push_back(std::move(item));
    } while (accept_punct(","));

    if (accept_kw("FROM")) {
      spec->from.push_back(from_item());
      while (accept_punct(",")) spec->from.push_back(from_item());
    }
    if (accept_kw("WHERE")) spec->where = expr();
    if (is_kw("GROUP")) {
      pos_ += 1;
      expect_kw("BY");
      do {
        spec->group_by.push_back(expr());
      } while (accept_punct(","));
    }
    if (is_kw("HAVING")) fail("HAVING is not supported");
    if (accept_kw("FINALIZE")) {
      accept_kw("WHERE");
      spec->finalize = expr();
    }
    if (is_kw("EMIT")) {
      ++pos_;
      if (accept_kw("CHANGES"))
        fail("EMIT CHANGES is not supported; query CHANGES(<relation>) instead");
      if (accept_kw("FINAL")) fail("EMIT FINAL is not supported; wrap the query in FINAL(...)");
      fail("EMIT is not supported");
    }
    if (is_kw("ORDER")) {
      ++pos_;
      expect_kw("BY");
      do {
        OrderKey k;
        k.expr = expr();
        if (accept_kw("DESC"))
          k.desc = true;
        else
          accept_kw("ASC");
        spec->order_by.push_back(std::move(k));
      } while (accept_punct(","));
    }
    if (is_kw("LIMIT")) {
      if (changes_depth_ == 0)
        fail("LIMIT is only supported inside CHANGES(...) sources");
      ++pos_;
      spec->limit = integer_lit();
    }

    auto q = std::make_shared<QueryExpr>();
    q->kind = QueryExpr::Kind::Spec;
    q->spec = spec;
    if (final_prefix) {
      auto f = std::make_shared<QueryExpr>();
      f->kind = QueryExpr::Kind::Final;
      f->left = q;
      return f;
    }
    return q;
  }

  bool reserved_after_select_item() const {
    static const char* kws[] = {"FROM", "WHERE", "GROUP",  "ORDER",     "LIMIT", "UNION",
                                "INTERSECT", "HAVING", "FINALIZE", "EMIT", "AS", nullptr};
    for (int i = 0; kws[i]; ++i)
      if (is_kw(kws[i])) return true;
    return false;
  }

  FromItem from_item() {
    FromItem item = from_primary();
    // postfix window subquery
    if (is_kw("WINDOW")) {
      ++pos_;
      item.window = window_clause();
    }
    return item;
  }

  FromItem from_primary() {
    FromItem item;
    if (is_kw("CHANGES") && peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
      pos_ += 2;
      item.kind = FromItem::Kind::Changes;
      ++changes_depth_;
      if (is_kw("SELECT") || is_kw("WITH") || is_kw("FINAL") || is_punct("(")) {
        item.subquery = query();
      } else {
        item.changes_table = ident();
      }
      --changes_depth_;
      std::vector<ExprPtr> time_args;
      while (accept_punct(",")) {
        if (cur().kind == Token::Kind::String &&
            (to_upper(cur().text) == "DELTA" || to_upper(cur().text) == "LOG")) {
          item.changes_format = to_upper(cur().text);
          ++pos_;
        } else if (cur().kind == Token::Kind::String) {
          raise(ErrorCode::UnknownFormat, "unknown CHANGES format '" + cur().text + "'");
        } else {
          time_args.push_back(expr());
        }
      }
      if (time_args.size() >= 1) item.changes_from = time_args[0];
      if (time_args.size() >= 2) item.changes_to = time_args[1];
      if (time_args.size() > 2) fail("too many time arguments to CHANGES");
      expect_punct(")");
      alias_opt(item);
      return item;
    }
    if (is_kw("TABLE") && peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
      pos_ += 2;
      item.kind = FromItem::Kind::TableFunc;
      item.func_name = ident();
      expect_punct("(");
      if (!is_punct(")")) {
        do {
          item.func_args.push_back(expr());
        } while (accept_punct(","));
      }
      expect_punct(")");
      expect_punct(")");
      alias_opt(item);
      return item;
    }
    if (is_punct("(")) {
      ++pos_;
      if (is_kw("SELECT") || is_kw("WITH") || is_kw("FINAL")) {
        item.kind = FromItem::Kind::Subquery;
        item.subquery = query();
        expect_punct(")");
        alias_opt(item);
        return item;
      }
      // parenthesized comma-join group (left correlation allowed)
      item.kind = FromItem::Kind::Group;
      item.children.push_back(from_item());
      while (accept_punct(",")) item.children.push_back(from_item());
      expect_punct(")");
      alias_opt(item);
      return item;
    }
    item.kind = FromItem::Kind::Table;
    item.table = ident();
    alias_opt(item);
    return item;
  }

  void alias_opt(FromItem& item) {
    if (cur().kind == Token::Kind::Ident && !reserved_from_follow()) item.alias = ident();
  }

  bool reserved_from_follow() const {
    static const char* kws[] = {"WHERE",  "GROUP",    "ORDER", "LIMIT", "UNION", "INTERSECT",
                                "WINDOW", "FINALIZE", "ON",    "TO",    "LOG",   "WITH",
                                "EMIT",   "HAVING",   "WHEN",  "AS",    "SELECT", nullptr};
    for (int i = 0; kws[i]; ++i)
      if (is_kw(kws[i])) return true;
    return false;
  }

  // Accepts INTERVAL '5' DAY, '5' DAYS, 30 SECONDS, or a plain expression.
  ExprPtr interval_ish() {
    if ((cur().kind == Token::Kind::String || cur().kind == Token::Kind::Number) &&
        peek(1).kind == Token::Kind::Ident && parse_interval_unit(peek(1).upper)) {
      int64_t n = std::strtoll(cur().text.c_str(), nullptr, 10);
      ++pos_;
      auto unit = parse_interval_unit(ident());
      return Expr::lit(Value::interval(Interval{n * interval_unit_seconds(*unit), *unit}));
    }
    return expr();
  }

  std::shared_ptr<WindowClause> window_clause() {
    auto w = std::make_shared<WindowClause>();
    if (is_kw("HOPPING") || is_kw("TUMBLING")) {
      bool tumbling = is_kw("TUMBLING");
      ++pos_;
      expect_punct("(");
      expect_kw("SIZE");
      w->range = interval_ish();
      if (accept_punct(",")) {
        expect_kw("ADVANCE");
        expect_kw("BY");
        w->advance = interval_ish();
      } else if (tumbling) {
        w->advance = w->range;
      }
      expect_punct(")");
      w->hopping_sugar = true;
      return w;
    }
    expect_punct("(");
    {
      std::string q, n = ident();
      if (accept_punct(".")) {
        q = n;
        n = ident();
      }
      w->column = Expr::column(q, n);
    }
    while (!is_punct(")")) {
      if (accept_kw("START_WITH")) {
        w->start = expr_primary();
      } else if (is_kw("START") && is_kw(1, "WITH")) {
        pos_ += 2;
        w->start = expr_primary();
      } else if (accept_kw("RANGE")) {
        w->range = interval_ish();
      } else if (accept_kw("ADVANCE")) {
        accept_kw("BY");
        w->advance = interval_ish();
      } else if (accept_kw("GRACE")) {
        w->grace = interval_ish();
      } else if (accept_kw("BOUNDS")) {
        expect_punct("(");
        w->start_bound = ident();
        expect_punct(",");
        w->end_bound = ident();
        expect_punct(")");
      } else {
        fail("unexpected token '" + cur().text + "' in WINDOW clause");
      }
    }
    expect_punct(")");
    if (!w->range) fail("WINDOW clause requires RANGE");
    return w;
  }

  // ---- expressions --------------------------------------------------------

  ExprPtr expr() { return expr_or(); }

  ExprPtr expr_or() {
    ExprPtr e = expr_and();
    while (accept_kw("OR")) e = Expr::binary(BinOp::Or, e, expr_and());
    return e;
  }

  ExprPtr expr_and() {
    ExprPtr e = expr_not();
    while (accept_kw("AND")) e = Expr::binary(BinOp::And, e, expr_not());
    return e;
  }

  ExprPtr expr_not() {
    if (is_kw("NOT") && !(is_kw(1, "EXISTS") || is_kw(1, "EXIST"))) {
      ++pos_;
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Not;
      e->lhs = expr_not();
      return e;
    }
    return expr_cmp();
  }

  ExprPtr expr_cmp() {
    ExprPtr e = expr_add();
    if (is_kw("IS")) {
      ++pos_;
      bool neg = accept_kw("NOT");
      expect_kw("NULL");
      auto r = std::make_shared<Expr>();
      r->kind = Expr::Kind::IsNull;
      r->negated = neg;
      r->lhs = e;
      return r;
    }
    struct OpMap {
      const char* sym;
      BinOp op;
    };
    static const OpMap ops[] = {{"=", BinOp::Eq},  {"!=", BinOp::Ne}, {"<>", BinOp::Ne},
                                {"<=", BinOp::Le}, {">=", BinOp::Ge}, {"<", BinOp::Lt},
                                {">", BinOp::Gt}};
    for (const auto& m : ops) {
      if (is_punct(m.sym)) {
        ++pos_;
        return Expr::binary(m.op, e, expr_add());
      }
    }
    return e;
  }

  ExprPtr expr_add() {
    ExprPtr e = expr_mul();
    while (true) {
      if (is_punct("+")) {
        ++pos_;
        e = Expr::binary(BinOp::Add, e, expr_mul());
      } else if (is_punct("-")) {
        ++pos_;
        e = Expr::binary(BinOp::Sub, e, expr_mul());
      } else {
        break;
      }
    }
    return e;
  }

  ExprPtr expr_mul() {
    ExprPtr e = expr_unary();
    while (true) {
      if (is_punct("*")) {
        ++pos_;
        e = Expr::binary(BinOp::Mul, e, expr_unary());
      } else if (is_punct("/")) {
        ++pos_;
        e = Expr::binary(BinOp::Div, e, expr_unary());
      } else {
        break;
      }
    }
    return e;
  }

  ExprPtr expr_unary() {
    if (is_punct("-")) {
      ++pos_;
      ExprPtr inner = expr_unary();
      if (inner->kind == Expr::Kind::Literal && inner->literal.kind() == ValueKind::Int)
        return Expr::lit(Value::integer(-inner->literal.as_int()));
      if (inner->kind == Expr::Kind::Literal && inner->literal.kind() == ValueKind::Decimal) {
        Decimal d = inner->literal.as_decimal();
        d.coeff = -d.coeff;
        return Expr::lit(Value::decimal(d));
      }
      return Expr::binary(BinOp::Sub, Expr::lit(Value::integer(0)), inner);
    }
    if (is_punct("+")) ++pos_;
    return expr_primary();
  }

  ExprPtr expr_primary() {
    if (cur().kind == Token::Kind::Number) {
      auto d = Decimal::parse(cur().text);
      if (!d) fail("bad numeric literal '" + cur().text + "'");
      bool is_int = cur().text.find('.') == std::string::npos;
      ++pos_;
      return Expr::lit(is_int ? Value::integer(d->coeff * [&] {
        int64_t p = 1;
        for (int32_t i = 0; i < -d->scale; ++i) p *= 10;
        return p;
      }())
                              : Value::decimal(*d));
    }
    if (cur().kind == Token::Kind::String) {
      std::string s = cur().text;
      ++pos_;
      return Expr::lit(Value::text(std::move(s)));
    }
    if (cur().kind == Token::Kind::TimeLabel) {
      auto t = Timestamp::parse(cur().text);
      if (!t) fail("bad time label '" + cur().text + "'");
      ++pos_;
      return Expr::lit(Value::timestamp(*t));
    }
    if (accept_kw("NULL")) return Expr::lit(Value::null());
    if (accept_kw("TRUE")) return Expr::lit(Value::boolean(true));
    if (accept_kw("FALSE")) return Expr::lit(Value::boolean(false));
    if (accept_kw("INTERVAL")) {
      if (cur().kind != Token::Kind::String && cur().kind != Token::Kind::Number)
        fail("expected interval literal after INTERVAL");
      int64_t n = std::strtoll(cur().text.c_str(), nullptr, 10);
      ++pos_;
      auto unit = parse_interval_unit(ident());
      if (!unit) fail("unknown interval unit");
      if (accept_kw("TO")) ident();  // DAY TO SECOND qualifier, rendering only
      return Expr::lit(Value::interval(Interval{n * interval_unit_seconds(*unit), *unit}));
    }
    if (is_kw("EXISTS") || is_kw("EXIST") ||
        (is_kw("NOT") && (is_kw(1, "EXISTS") || is_kw(1, "EXIST")))) {
      bool neg = accept_kw("NOT");
      ++pos_;  // EXISTS
      expect_punct("(");
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Exists;
      e->negated = neg;
      e->subquery = query();
      expect_punct(")");
      return e;
    }
    if (is_punct("(")) {
      ++pos_;
      if (is_kw("SELECT") || is_kw("WITH")) {
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::ScalarSubquery;
        e->subquery = query();
        expect_punct(")");
        return e;
      }
      ExprPtr e = expr();
      expect_punct(")");
      return e;
    }
    if (accept_kw("LAST_SCHEDULE_TIME")) {
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::LastScheduleTime;
      return e;
    }
    if (is_kw("CURRENT_TIMESTAMP")) {
      ++pos_;
      return Expr::func("now", {});
    }

    if (cur().kind != Token::Kind::Ident) fail("unexpected token '" + cur().text + "'");

    // aggregate?
    static const std::pair<const char*, AggKind> aggs[] = {{"COUNT", AggKind::Count},
                                                           {"SUM", AggKind::Sum},
                                                           {"AVG", AggKind::Avg},
                                                           {"MIN", AggKind::Min},
                                                           {"MAX", AggKind::Max}};
    for (const auto& [name, kind] : aggs) {
      if (is_kw(name) && peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
        pos_ += 2;
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::Aggregate;
        e->agg = kind;
        if (kind == AggKind::Count && is_punct("*")) {
          ++pos_;
          e->agg = AggKind::CountStar;
        } else {
          e->args.push_back(expr());
        }
        expect_punct(")");
        return e;
      }
    }

    // FLOOR(x TO unit) keeps the unit as a trailing text literal argument.
    if (is_kw("FLOOR") && peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
      pos_ += 2;
      ExprPtr arg = expr();
      std::vector<ExprPtr> args{arg};
      if (accept_kw("TO")) args.push_back(Expr::lit(Value::text(to_upper(ident()))));
      expect_punct(")");
      return Expr::func("floor", std::move(args));
    }

    // general function call
    if (peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
      std::string fname = ident();
      std::string lower;
      for (char c : fname) lower.push_back(static_cast<char>(std::tolower((unsigned char)c)));
      expect_punct("(");
      std::vector<ExprPtr> args;
      if (!is_punct(")")) {
        do {
          // date_trunc(minute, ts): a bare unit identifier argument
          if (lower == "date_trunc" && args.empty() && cur().kind == Token::Kind::Ident &&
              parse_interval_unit(cur().upper)) {
            args.push_back(Expr::lit(Value::text(to_upper(ident()))));
          } else {
            args.push_back(expr());
          }
        } while (accept_punct(","));
      }
      expect_punct(")");
      return Expr::func(lower, std::move(args));
    }

    // column reference
    std::string first = ident();
    if (accept_punct(".")) {
      std::string second = ident();
      return Expr::column(first, second);
    }
    return Expr::column("", first);
  }
};

}  // namespace

ExprPtr Expr::lit(Value v) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Literal;
  e->literal = std::move(v);
  return e;
}

ExprPtr Expr::column(std::string qualifier, std::string name) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::ColumnRef;
  e->qualifier = std::move(qualifier);
  e->name = std::move(name);
  return e;
}

ExprPtr Expr::binary(BinOp op, ExprPtr l, ExprPtr r) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Binary;
  e->op = op;
  e->lhs = std::move(l);
  e->rhs = std::move(r);
  return e;
}

ExprPtr Expr::func(std::string name, std::vector<ExprPtr> args) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::FuncCall;
  e->name = std::move(name);
  e->args = std::move(args);
  return e;
}

std::vector<StatementPtr> parse(const std::string& sql) {
  Parser p(sql);
  return p.parse_all();
}

StatementPtr parse_one(const std::string& sql) {
  auto list = parse(sql);
  if (list.size() != 1) raise(ErrorCode::SyntaxError, "expected exactly one statement");
  return list[0];
}

}  // namespace streamsql
