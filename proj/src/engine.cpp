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
#include "streamsql/engine.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>

#include <json.hpp>

#include "streamsql/analysis.hpp"
#include "streamsql/eval.hpp"
#include "streamsql/parser.hpp"

namespace streamsql {

namespace {

bool is_true(const Value& v) { return v.kind() == ValueKind::Bool && v.as_bool(); }

Value coerce_to_column(const Value& v, const ColumnDef& col) {
  if (v.is_null()) return v;
  switch (col.type) {
    case ColumnType::Text:
      if (v.kind() == ValueKind::Text) return v;
      break;
    case ColumnType::Int:
      if (v.kind() == ValueKind::Int) return v;
      if (v.kind() == ValueKind::Decimal && v.as_decimal().scale == 0)
        return Value::integer(v.as_decimal().coeff);
      break;
    case ColumnType::Number:
      if (v.kind() == ValueKind::Decimal) return v;
      if (v.kind() == ValueKind::Int) return v;  // numbers accept integers as-is
      break;
    case ColumnType::Date:
    case ColumnType::Timestamp:
      if (v.kind() == ValueKind::Timestamp) return v;
      if (v.kind() == ValueKind::Text) {
        auto t = Timestamp::parse(v.as_text());
        if (t) return Value::timestamp(*t);
      }
      break;
    case ColumnType::Bool:
      if (v.kind() == ValueKind::Bool) return v;
      break;
  }
  raise(ErrorCode::SchemaMismatch, "value " + v.render() + " does not fit column " + col.name +
                                       " (" + column_type_name(col.type) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// rendering helpers

std::string render_value_for_output(const Value& v) { return v.render(); }

std::vector<std::string> render_result_table(const ResultTable& t) {
  std::vector<std::string> lines;
  std::string header;
  for (size_t i = 0; i < t.columns.size(); ++i) {
    if (i) header += " | ";
    header += t.columns[i];
  }
  lines.push_back(header);
  for (const Row& r : t.rows) {
    std::string line;
    for (size_t i = 0; i < r.size(); ++i) {
      if (i) line += " | ";
      line += render_value_for_output(r[i]);
    }
    lines.push_back(line);
  }
  return lines;
}

// Fetched rows print as tuples with a leading change marker. An Action
// column, when present, supplies the marker and leaves the tuple.
std::string render_fetch_row(const ResultTable& t, size_t row_index) {
  int action_col = -1;
  for (size_t i = 0; i < t.columns.size(); ++i)
    if (ident_eq(t.columns[i], "Action")) action_col = static_cast<int>(i);
  const Row& r = t.rows[row_index];
  std::string marker = "+";
  if (action_col >= 0 && r[action_col].kind() == ValueKind::Text) {
    const std::string& a = r[action_col].as_text();
    marker = a == "DELETE" ? "-" : (a == "UPDATE" ? "~" : "+");
  }
  std::string out = "(" + marker;
  for (size_t i = 0; i < r.size(); ++i) {
    if (static_cast<int>(i) == action_col) continue;
    out += ", " + render_value_for_output(r[i]);
  }
  out += ")";
  return out;
}

// ---------------------------------------------------------------------------
// state backup

struct Engine::StateBackup {
  Timestamp now;
  int64_t commit_seq;
  std::vector<Timestamp> commit_times;
  std::vector<std::set<std::string>> commit_touched;
  int64_t event_seq;
  std::map<std::string, TableState> tables;
  std::map<std::string, Task> tasks;
  std::map<std::string, Cursor> cursors;
  std::vector<Subscription> subscriptions;
  bool txn_open;
  std::set<std::string> txn_touched;
  std::map<std::string, Value> txn_cmax;
  std::deque<std::string> async_queue;
};

std::shared_ptr<Engine::StateBackup> Engine::backup_state() const {
  auto b = std::make_shared<StateBackup>();
  b->now = now_;
  b->commit_seq = commit_seq_;
  b->commit_times = commit_times_;
  b->commit_touched = commit_touched_;
  b->event_seq = event_seq_;
  b->tables = tables_;
  b->tasks = tasks_;
  b->cursors = cursors_;
  b->subscriptions = subscriptions_;
  b->txn_open = txn_open_;
  b->txn_touched = txn_touched_;
  b->txn_cmax = txn_cmax_;
  b->async_queue = async_queue_;
  return b;
}

void Engine::restore_state(const StateBackup& b) {
  now_ = b.now;
  commit_seq_ = b.commit_seq;
  commit_times_ = b.commit_times;
  commit_touched_ = b.commit_touched;
  event_seq_ = b.event_seq;
  tables_ = b.tables;
  tasks_ = b.tasks;
  cursors_ = b.cursors;
  subscriptions_ = b.subscriptions;
  txn_open_ = b.txn_open;
  txn_touched_ = b.txn_touched;
  txn_cmax_ = b.txn_cmax;
  async_queue_ = b.async_queue;
}

// ---------------------------------------------------------------------------
// construction / basic plumbing

Engine::Engine() {
  now_ = *Timestamp::parse("00:00");
  commit_times_.push_back(now_);
  commit_touched_.push_back({});
  epoch_ = *Timestamp::parse("1970-01-01");
  if (const char* env = std::getenv("ENGINE_EPOCH")) {
    auto t = Timestamp::parse(env);
    if (t) epoch_ = *t;
  }
}

const TableState* Engine::find_table(const std::string& name) const {
  auto it = tables_.find(to_upper(name));
  return it == tables_.end() ? nullptr : &it->second;
}

TableState* Engine::find_table(const std::string& name) {
  auto it = tables_.find(to_upper(name));
  return it == tables_.end() ? nullptr : &it->second;
}

TableState& Engine::need_table(const std::string& name) {
  TableState* t = find_table(name);
  if (!t) raise(ErrorCode::UnknownTable, "unknown table " + name);
  return *t;
}

const TableState& Engine::need_table(const std::string& name) const {
  const TableState* t = find_table(name);
  if (!t) raise(ErrorCode::UnknownTable, "unknown table " + name);
  return *t;
}

void Engine::require_no_txn(const char* what) const {
  if (txn_open_)
    raise(ErrorCode::DdlInTxn, std::string(what) + " cannot run inside an open transaction");
}

void Engine::ensure_txn() {
  if (!txn_open_) {
    txn_open_ = true;
    txn_touched_.clear();
    txn_cmax_.clear();
  }
}

// ---------------------------------------------------------------------------
// execute dispatch

ExecResult Engine::execute(const std::string& sql) {
  ExecResult combined;
  std::vector<StatementPtr> stmts;
  try {
    stmts = parse(sql);
  } catch (const EngineError& e) {
    combined.ok = false;
    combined.error = e;
    combined.lines.push_back(std::string("error: ") + error_code_name(e.code) + ": " + e.message);
    return combined;
  }
  for (const auto& s : stmts) {
    ExecResult r = execute_statement(*s);
    for (auto& line : r.lines) combined.lines.push_back(line);
    combined.table = r.table;
    combined.has_table = r.has_table;
    combined.no_data = r.no_data;
    if (!r.ok) {
      combined.ok = false;
      combined.error = r.error;
      break;
    }
  }
  return combined;
}

ExecResult Engine::execute_statement(const Statement& stmt) {
  ExecResult out;
  side_lines_.clear();
  auto backup = backup_state();
  try {
    switch (stmt.kind) {
      case Statement::Kind::Select: exec_select(stmt, out); break;
      case Statement::Kind::Insert: exec_insert(stmt, out); break;
      case Statement::Kind::Update: exec_update(stmt, out); break;
      case Statement::Kind::Delete: exec_delete(stmt, out); break;
      case Statement::Kind::Begin: exec_begin(out); break;
      case Statement::Kind::Commit: exec_commit(out); break;
      case Statement::Kind::Rollback: exec_rollback(out); break;
      case Statement::Kind::CreateTable: exec_create_table(stmt, out); break;
      case Statement::Kind::AlterTable: exec_alter_table(stmt, out); break;
      case Statement::Kind::CreateTask: exec_create_task(stmt, out); break;
      case Statement::Kind::AlterTask: exec_alter_task(stmt, out); break;
      case Statement::Kind::DropTask: exec_drop_task(stmt, out); break;
      case Statement::Kind::ExecuteTask: exec_execute_task(stmt, out); break;
      case Statement::Kind::DeclareCursor: exec_declare_cursor(stmt, out); break;
      case Statement::Kind::OpenCursor: exec_open_cursor(stmt, out); break;
      case Statement::Kind::FetchCursor: exec_fetch(stmt, out); break;
      case Statement::Kind::CloseCursor: exec_close_cursor(stmt, out); break;
      case Statement::Kind::Subscribe: exec_subscribe(stmt, out); break;
      case Statement::Kind::Set: exec_set(stmt, out); break;
    }
  } catch (const EngineError& e) {
    restore_state(*backup);
    std::string note;
    // Finalization violations abort the whole transaction.
    if ((e.code == ErrorCode::FinalizedRowInsert || e.code == ErrorCode::FinalizedRowMutation) &&
        txn_open_) {
      txn_open_ = false;
      for (auto& [_, t] : tables_) {
        auto keep = [&](const RowVersion& v) { return v.insert_commit.has_value(); };
        std::vector<RowVersion> kept;
        for (auto& v : t.versions) {
          if (!keep(v)) continue;
          RowVersion c = v;
          if (c.delete_time && !c.delete_commit) {
            c.delete_time.reset();
            c.delete_event = 0;
            c.deleted_by_update = false;
          }
          kept.push_back(std::move(c));
        }
        t.versions = std::move(kept);
      }
      note = "; transaction rolled back";
    }
    out.ok = false;
    out.error = e;
    out.lines.clear();
    out.lines.push_back(std::string("error: ") + error_code_name(e.code) + ": " + e.message +
                        note);
    return out;
  }
  for (auto& line : side_lines_) out.lines.push_back(line);
  side_lines_.clear();
  return out;
}

// ---------------------------------------------------------------------------
// SELECT

void Engine::exec_select(const Statement& s, ExecResult& out) {
  EvalOptions opt;
  opt.stamp = commit_seq_;
  opt.include_pending = txn_open_;
  opt.now = now_;
  bool final_query = s.query->kind == QueryExpr::Kind::Final;
  switch (expired_reads_) {
    case ExpiredReads::SessionDefault:
      opt.expired_guard = final_query ? ExpiredGuardMode::Error : ExpiredGuardMode::Ignore;
      break;
    case ExpiredReads::Ignore: opt.expired_guard = ExpiredGuardMode::Ignore; break;
    case ExpiredReads::Error: opt.expired_guard = ExpiredGuardMode::Error; break;
  }
  Rel rel = eval_query_rel(*this, *s.query, opt);
  out.has_table = true;
  for (const auto& c : rel.cols)
    if (!c.hidden) out.table.columns.push_back(c.name);
  for (const Row& r : rel.rows) {
    Row visible;
    for (size_t i = 0; i < rel.cols.size(); ++i)
      if (!rel.cols[i].hidden) visible.push_back(r[i]);
    out.table.rows.push_back(std::move(visible));
  }
  out.lines = render_result_table(out.table);
}

ResultTable Engine::query(const std::string& select_sql) const {
  return query_at(select_sql, commit_seq_);
}

ResultTable Engine::query_at(const std::string& select_sql, int64_t stamp) const {
  StatementPtr s = parse_one(select_sql);
  if (s->kind != Statement::Kind::Select)
    raise(ErrorCode::SemanticError, "query() takes a SELECT");
  EvalOptions opt;
  opt.stamp = stamp;
  opt.now = now_;
  Rel rel = eval_query_rel(*this, *s->query, opt);
  ResultTable t;
  for (const auto& c : rel.cols)
    if (!c.hidden) t.columns.push_back(c.name);
  for (const Row& r : rel.rows) {
    Row visible;
    for (size_t i = 0; i < rel.cols.size(); ++i)
      if (!rel.cols[i].hidden) visible.push_back(r[i]);
    t.rows.push_back(std::move(visible));
  }
  return t;
}

// ---------------------------------------------------------------------------
// DML

Value& Engine::effective_cmax(TableState& table) {
  auto it = txn_cmax_.find(to_upper(table.name));
  if (it != txn_cmax_.end()) return it->second;
  return txn_cmax_[to_upper(table.name)] = table.increasing ? table.increasing->c_max
                                                            : Value::null();
}

void Engine::check_increasing_insert(TableState& table, const std::vector<Row>& rows) {
  if (!table.increasing || !table.increasing->enabled) return;
  IncreasingConstraint& inc = *table.increasing;
  if (inc.deferred) return;  // verified at commit
  int ci = table.col_index(inc.column);
  Value& cmax = effective_cmax(table);
  Value bound = cmax;
  if (!bound.is_null() && inc.grace_secs)
    bound = bound.sub(Value::interval(Interval{*inc.grace_secs}));
  for (const Row& r : rows) {
    const Value& v = r[ci];
    if (v.is_null()) raise(ErrorCode::IncreasingViolation, inc.column + " must not be null");
    if (!bound.is_null()) {
      auto c = v.compare(bound);
      if (!c || (inc.strict ? *c <= 0 : *c < 0))
        raise(ErrorCode::IncreasingViolation,
              v.render() + " lags behind the accepted floor " + bound.render() + " on " +
                  table.name + "." + inc.column);
    }
  }
  for (const Row& r : rows) {
    const Value& v = r[ci];
    if (cmax.is_null() || *v.compare(cmax) > 0) cmax = v;
  }
}

void Engine::check_finalize_insert(TableState& table, const Row& row) {
  for (const auto& fc : table.finalizers) {
    Value v = eval_expr_on_table_row(*this, *fc.predicate, table, row, commit_seq_, now_);
    if (is_true(v))
      raise(ErrorCode::FinalizedRowInsert,
            "row is already final under FINALIZE " + render_expr(*fc.predicate));
  }
}

void Engine::check_finalize_mutation(TableState& table, const Row& row, bool is_update) {
  for (const auto& fc : table.finalizers) {
    Value v = eval_expr_on_table_row(*this, *fc.predicate, table, row, commit_seq_, now_);
    if (is_true(v))
      raise(ErrorCode::FinalizedRowMutation,
            std::string(is_update ? "update" : "delete") + " touches a final row (FINALIZE " +
                render_expr(*fc.predicate) + ")");
  }
}

int64_t Engine::insert_rows(TableState& table, const std::vector<Row>& rows,
                            const std::vector<std::string>& columns) {
  ensure_txn();
  // Map the given columns (or full schema) onto schema positions.
  std::vector<int> target;
  if (columns.empty()) {
    for (size_t i = 0; i < table.schema.size(); ++i) target.push_back(static_cast<int>(i));
  } else {
    for (const auto& c : columns) {
      int i = table.col_index(c);
      if (i < 0) raise(ErrorCode::UnresolvedName, "unknown column " + c + " in " + table.name);
      target.push_back(i);
    }
  }
  std::vector<Row> full_rows;
  for (const Row& r : rows) {
    if (r.size() != target.size())
      raise(ErrorCode::SchemaMismatch, "expected " + std::to_string(target.size()) +
                                           " values, got " + std::to_string(r.size()));
    Row full(table.schema.size(), Value::null());
    for (size_t i = 0; i < target.size(); ++i)
      full[target[i]] = coerce_to_column(r[i], table.schema[target[i]]);
    full_rows.push_back(std::move(full));
  }
  check_increasing_insert(table, full_rows);
  for (const Row& r : full_rows) check_finalize_insert(table, r);
  for (Row& r : full_rows) {
    RowVersion v;
    v.row_id = table.next_row_id++;
    v.payload = std::move(r);
    v.insert_time = now_;
    v.insert_event = ++event_seq_;
    table.versions.push_back(std::move(v));
  }
  txn_touched_.insert(to_upper(table.name));
  return static_cast<int64_t>(full_rows.size());
}

int64_t Engine::update_rows(TableState& table, const ExprPtr& where,
                            const std::vector<std::pair<std::string, ExprPtr>>& assignments) {
  ensure_txn();
  if (table.insert_only)
    raise(ErrorCode::InsertOnlyViolation, table.name + " is INSERT ONLY; rows cannot be updated");
  std::vector<size_t> hits;
  for (size_t i = 0; i < table.versions.size(); ++i) {
    const RowVersion& v = table.versions[i];
    if (!v.visible(commit_seq_, true)) continue;
    if (where) {
      Value w = eval_expr_on_table_row(*this, *where, table, v.payload, commit_seq_, now_);
      if (!is_true(w)) continue;
    }
    hits.push_back(i);
  }
  IncreasingConstraint* inc =
      table.increasing && table.increasing->enabled ? &*table.increasing : nullptr;
  int inc_ci = inc ? table.col_index(inc->column) : -1;
  for (size_t idx : hits) {
    Row old_payload = table.versions[idx].payload;
    check_finalize_mutation(table, old_payload, true);
    Row new_payload = old_payload;
    for (const auto& [col, expr] : assignments) {
      int ci = table.col_index(col);
      if (ci < 0) raise(ErrorCode::UnresolvedName, "unknown column " + col + " in " + table.name);
      Value v = eval_expr_on_table_row(*this, *expr, table, old_payload, commit_seq_, now_);
      new_payload[ci] = coerce_to_column(v, table.schema[ci]);
    }
    check_finalize_insert(table, new_payload);
    if (inc && !inc->deferred) {
      Value& cmax = effective_cmax(table);
      const Value& nv = new_payload[inc_ci];
      if (!cmax.is_null()) {
        auto c = nv.compare(cmax);
        if (!c || *c <= 0)
          raise(ErrorCode::IncreasingViolation,
                "updated " + inc->column + " value " + nv.render() +
                    " is not above the current maximum " + cmax.render());
      }
      if (cmax.is_null() || *nv.compare(cmax) > 0) cmax = nv;
    }
    RowVersion& old_v = table.versions[idx];
    old_v.delete_time = now_;
    old_v.delete_event = ++event_seq_;
    old_v.deleted_by_update = true;
    RowVersion nv;
    nv.row_id = old_v.row_id;  // UPDATE keeps the row id
    nv.payload = std::move(new_payload);
    nv.insert_time = now_;
    nv.insert_event = ++event_seq_;
    nv.inserted_by_update = true;
    table.versions.push_back(std::move(nv));
  }
  if (!hits.empty()) txn_touched_.insert(to_upper(table.name));
  return static_cast<int64_t>(hits.size());
}

int64_t Engine::delete_rows(TableState& table, const ExprPtr& where) {
  ensure_txn();
  if (table.insert_only)
    raise(ErrorCode::InsertOnlyViolation, table.name + " is INSERT ONLY; rows cannot be deleted");
  std::vector<size_t> hits;
  for (size_t i = 0; i < table.versions.size(); ++i) {
    const RowVersion& v = table.versions[i];
    if (!v.visible(commit_seq_, true)) continue;
    if (where) {
      Value w = eval_expr_on_table_row(*this, *where, table, v.payload, commit_seq_, now_);
      if (!is_true(w)) continue;
    }
    hits.push_back(i);
  }
  IncreasingConstraint* inc =
      table.increasing && table.increasing->enabled ? &*table.increasing : nullptr;
  int inc_ci = inc ? table.col_index(inc->column) : -1;
  for (size_t idx : hits) {
    const Row& payload = table.versions[idx].payload;
    check_finalize_mutation(table, payload, false);
    if (inc && !inc->deferred) {
      const Value& cmax = effective_cmax(table);
      if (!cmax.is_null()) {
        auto c = payload[inc_ci].compare(cmax);
        if (!c || *c <= 0)
          raise(ErrorCode::IncreasingViolation,
                "rows at or below the maximum " + inc->column +
                    " cannot be deleted; use expiration to retire old data");
      }
    }
    RowVersion& v = table.versions[idx];
    v.delete_time = now_;
    v.delete_event = ++event_seq_;
  }
  if (!hits.empty()) txn_touched_.insert(to_upper(table.name));
  return static_cast<int64_t>(hits.size());
}

void Engine::exec_insert(const Statement& s, ExecResult& out) {
  TableState& table = need_table(s.table);
  bool autocommit = !txn_open_;
  std::vector<Row> rows;
  if (s.query) {
    EvalOptions opt;
    opt.stamp = commit_seq_;
    opt.include_pending = txn_open_;
    opt.now = now_;
    Rel rel = eval_query_rel(*this, *s.query, opt);
    for (const Row& r : rel.rows) {
      Row visible;
      for (size_t i = 0; i < rel.cols.size(); ++i)
        if (!rel.cols[i].hidden) visible.push_back(r[i]);
      rows.push_back(std::move(visible));
    }
  } else {
    for (const auto& exprs : s.values_rows) {
      Row r;
      for (const auto& e : exprs) r.push_back(eval_scalar(*this, *e, commit_seq_, now_));
      rows.push_back(std::move(r));
    }
  }
  int64_t n = insert_rows(table, rows, s.columns);
  if (autocommit) commit_now(txn_touched_);
  out.lines.push_back(std::to_string(n) + (n == 1 ? " row inserted" : " rows inserted"));
}

void Engine::exec_update(const Statement& s, ExecResult& out) {
  TableState& table = need_table(s.table);
  bool autocommit = !txn_open_;
  int64_t n = update_rows(table, s.where, s.assignments);
  if (autocommit) commit_now(txn_touched_);
  out.lines.push_back(std::to_string(n) + (n == 1 ? " row updated" : " rows updated"));
}

void Engine::exec_delete(const Statement& s, ExecResult& out) {
  TableState& table = need_table(s.table);
  bool autocommit = !txn_open_;
  int64_t n = delete_rows(table, s.where);
  if (autocommit) commit_now(txn_touched_);
  out.lines.push_back(std::to_string(n) + (n == 1 ? " row deleted" : " rows deleted"));
}

// ---------------------------------------------------------------------------
// transactions

void Engine::exec_begin(ExecResult& out) {
  if (txn_open_) raise(ErrorCode::TxnAlreadyOpen, "a transaction is already open");
  ensure_txn();
  out.lines.push_back("transaction started");
}

void Engine::exec_commit(ExecResult& out) {
  if (!txn_open_) raise(ErrorCode::NoOpenTxn, "no open transaction");
  commit_now(txn_touched_);
  out.lines.push_back("committed");
}

void Engine::exec_rollback(ExecResult& out) {
  if (!txn_open_) raise(ErrorCode::NoOpenTxn, "no open transaction");
  txn_open_ = false;
  txn_touched_.clear();
  txn_cmax_.clear();
  for (auto& [_, t] : tables_) {
    std::vector<RowVersion> kept;
    for (auto& v : t.versions) {
      if (!v.insert_commit) continue;  // pending insert: drop
      RowVersion c = v;
      if (c.delete_time && !c.delete_commit) {  // pending delete: unwind
        c.delete_time.reset();
        c.delete_event = 0;
        c.deleted_by_update = false;
      }
      kept.push_back(std::move(c));
    }
    t.versions = std::move(kept);
  }
  out.lines.push_back("rolled back");
}

void Engine::commit_now(std::set<std::string> touched) {
  // Deferred increasing constraints verify over the whole transaction.
  for (auto& [_, table] : tables_) {
    if (!table.increasing || !table.increasing->enabled || !table.increasing->deferred) continue;
    IncreasingConstraint& inc = *table.increasing;
    int ci = table.col_index(inc.column);
    Value cmax = inc.c_max;
    Value bound = cmax;
    if (!bound.is_null() && inc.grace_secs)
      bound = bound.sub(Value::interval(Interval{*inc.grace_secs}));
    for (const RowVersion& v : table.versions) {
      if (v.insert_commit) continue;  // only pending rows
      const Value& val = v.payload[ci];
      if (val.is_null())
        raise(ErrorCode::IncreasingViolation, inc.column + " must not be null");
      if (v.inserted_by_update) {
        if (!cmax.is_null()) {
          auto c = val.compare(cmax);
          if (!c || *c <= 0)
            raise(ErrorCode::IncreasingViolation,
                  "updated " + inc.column + " value " + val.render() +
                      " is not above the maximum " + cmax.render());
        }
      } else if (!bound.is_null()) {
        auto c = val.compare(bound);
        if (!c || (inc.strict ? *c <= 0 : *c < 0))
          raise(ErrorCode::IncreasingViolation,
                val.render() + " lags behind the accepted floor " + bound.render());
      }
    }
    for (const RowVersion& v : table.versions) {
      if (v.insert_commit || v.delete_commit) continue;
      if (!v.delete_time) {
        const Value& val = v.payload[ci];
        if (inc.c_max.is_null() || *val.compare(inc.c_max) > 0) inc.c_max = val;
      }
    }
  }

  auto backup = backup_state();
  int64_t stamp = ++commit_seq_;
  commit_times_.push_back(now_);
  commit_touched_.push_back(touched);

  for (auto& [_, table] : tables_) {
    bool any = false;
    for (auto& v : table.versions) {
      if (!v.insert_commit && (!v.delete_time || v.deleted_by_update || !v.delete_commit)) {
        if (!v.insert_commit) {
          v.insert_commit = stamp;
          any = true;
        }
      }
      if (v.delete_time && !v.delete_commit) {
        v.delete_commit = stamp;
        any = true;
      }
    }
    // Fold committed maxima into the constraint.
    if (any && table.increasing && table.increasing->enabled && !table.increasing->deferred) {
      auto it = txn_cmax_.find(to_upper(table.name));
      if (it != txn_cmax_.end()) table.increasing->c_max = it->second;
    }
  }
  txn_open_ = false;
  txn_touched_.clear();
  txn_cmax_.clear();

  try {
    run_commit_hooks(stamp, touched);
  } catch (const EngineError& e) {
    // A synchronous task failure past its limits aborts the whole commit.
    std::vector<std::pair<std::string, Row>> log_rows = pending_error_rows_;
    restore_state(*backup);
    pending_error_rows_ = log_rows;
    flush_error_log();
    // The restored state still holds the open transaction; discard it.
    txn_open_ = true;
    ExecResult scratch;
    exec_rollback(scratch);
    throw;
  }
  flush_error_log();
}

void Engine::run_commit_hooks(int64_t stamp, std::set<std::string> touched) {
  if (in_commit_) return;  // nested stamping inside a task body
  in_commit_ = true;
  struct Reset {
    bool* flag;
    ~Reset() { *flag = false; }
  } reset{&in_commit_};

  // Synchronous ON COMMIT tasks, in creation order, each at most once; a
  // task's writes extend `touched` so downstream tasks in the chain fire too.
  std::set<std::string> fired;
  bool progress = true;
  int guard = 0;
  while (progress) {
    progress = false;
    if (++guard > 200)
      raise(ErrorCode::TaskExecutionFailed, "task cascade did not settle (cycle?)");
    std::vector<Task*> ordered;
    for (auto& [_, t] : tasks_) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(),
              [](const Task* a, const Task* b) { return a->creation_seq < b->creation_seq; });
    for (Task* t : ordered) {
      if (t->state != TaskState::Active || fired.count(t->name)) continue;
      bool match_sync = false, match_async = false;
      for (const auto& trig : t->schedule.triggers) {
        if (trig.kind != ScheduleTrigger::Kind::OnCommit) continue;
        const std::vector<std::string>& deps =
            trig.tables.empty() ? t->dependencies : trig.tables;
        bool touches = false;
        for (const auto& d : deps)
          if (touched.count(to_upper(d))) touches = true;
        if (!touches) continue;
        (trig.asynchronous ? match_async : match_sync) = true;
      }
      if (match_async) {
        async_queue_.push_back(t->name);
        fired.insert(t->name);
        progress = true;
      }
      if (match_sync) {
        fired.insert(t->name);
        TaskRunReport rep = fire_task(*t, /*standalone=*/false);
        side_lines_.push_back("task " + t->name + ": applied I/U/D = " +
                              std::to_string(rep.inserted) + "/" + std::to_string(rep.updated) +
                              "/" + std::to_string(rep.deleted));
        // Stamp the task's own writes into this same commit.
        for (auto& [_, table] : tables_) {
          for (auto& v : table.versions) {
            if (!v.insert_commit) {
              v.insert_commit = stamp;
              touched.insert(to_upper(table.name));
              commit_touched_[stamp].insert(to_upper(table.name));
            }
            if (v.delete_time && !v.delete_commit) {
              v.delete_commit = stamp;
              touched.insert(to_upper(table.name));
              commit_touched_[stamp].insert(to_upper(table.name));
            }
          }
          if (txn_cmax_.count(to_upper(table.name)) && table.increasing &&
              table.increasing->enabled)
            table.increasing->c_max = txn_cmax_[to_upper(table.name)];
        }
        txn_open_ = false;
        txn_touched_.clear();
        txn_cmax_.clear();
        t->last_exec_stamp = stamp;
        t->last_exec_time = now_;
        progress = true;
      }
    }
  }

  deliver_subscriptions(touched, /*tick=*/false);
}

// ---------------------------------------------------------------------------
// clock / lifecycle passes

void Engine::advance_clock(Timestamp to) {
  if (to.secs < now_.secs)
    raise(ErrorCode::ClockRegression,
          "clock cannot move back from " + now_.render() + " to " + to.render());
  require_no_txn("clock advance");

  int guard = 0;
  while (true) {
    if (++guard > 10000) raise(ErrorCode::TaskExecutionFailed, "clock step did not settle");
    if (!async_queue_.empty()) {
      std::string name = async_queue_.front();
      async_queue_.pop_front();
      auto it = tasks_.find(to_upper(name));
      if (it != tasks_.end() && it->second.state == TaskState::Active) {
        TaskRunReport rep = fire_task(it->second, /*standalone=*/true);
        side_lines_.push_back("task " + it->second.name + ": applied I/U/D = " +
                              std::to_string(rep.inserted) + "/" + std::to_string(rep.updated) +
                              "/" + std::to_string(rep.deleted));
      }
      continue;
    }
    // Earliest periodic due in range.
    Task* due_task = nullptr;
    int64_t due = 0;
    std::vector<Task*> ordered;
    for (auto& [_, t] : tasks_) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(),
              [](const Task* a, const Task* b) { return a->creation_seq < b->creation_seq; });
    for (Task* t : ordered) {
      if (!t->next_periodic_due || *t->next_periodic_due > to.secs) continue;
      if (!due_task || *t->next_periodic_due < due) {
        due_task = t;
        due = *t->next_periodic_due;
      }
    }
    if (!due_task) break;
    now_.secs = std::max(now_.secs, due);
    int64_t period = 0;
    for (const auto& trig : due_task->schedule.triggers)
      if (trig.kind == ScheduleTrigger::Kind::Periodic) period = trig.period_secs;
    due_task->next_periodic_due = due + period;
    if (due_task->state == TaskState::Active && !task_past_end(*due_task)) {
      TaskRunReport rep = fire_task(*due_task, /*standalone=*/true);
      side_lines_.push_back("task " + due_task->name + ": applied I/U/D = " +
                            std::to_string(rep.inserted) + "/" + std::to_string(rep.updated) +
                            "/" + std::to_string(rep.deleted));
    }
  }

  now_ = to;
  deliver_subscriptions({}, /*tick=*/true);
}

int64_t Engine::expire_pass() {
  require_no_txn("expire pass");
  int64_t count = 0;
  for (auto& [_, table] : tables_) {
    if (!table.expire_predicate) continue;
    for (auto& v : table.versions) {
      if (v.expired || !v.insert_commit) continue;
      if (v.delete_commit) continue;
      Value r =
          eval_expr_on_table_row(*this, *table.expire_predicate, table, v.payload, commit_seq_,
                                 now_);
      if (is_true(r)) {
        v.expired = true;
        ++count;
      }
    }
  }
  return count;
}

int64_t Engine::purge_pass() {
  require_no_txn("purge pass");
  int64_t count = 0;
  for (auto& [_, table] : tables_) {
    bool any = false;
    std::vector<RowVersion> kept;
    for (auto& v : table.versions) {
      if (v.expired) {
        ++count;
        any = true;
        continue;  // physically removed
      }
      kept.push_back(v);
    }
    if (any) {
      table.versions = std::move(kept);
      if (table.expire_predicate)
        table.purge_horizons.push_back({table.expire_predicate, now_});
    }
  }
  return count;
}

}  // namespace streamsql
