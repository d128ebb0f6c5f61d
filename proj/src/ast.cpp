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
#include "streamsql/ast.hpp"

#include <cctype>

namespace streamsql {

std::string to_upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

bool ident_eq(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (std::toupper(static_cast<unsigned char>(a[i])) !=
        std::toupper(static_cast<unsigned char>(b[i])))
      return false;
  return true;
}

const char* column_type_name(ColumnType t) {
  switch (t) {
    case ColumnType::Bool: return "BOOLEAN";
    case ColumnType::Int: return "INTEGER";
    case ColumnType::Number: return "NUMBER";
    case ColumnType::Text: return "VARCHAR";
    case ColumnType::Date: return "DATE";
    case ColumnType::Timestamp: return "TIMESTAMP";
  }
  return "?";
}

namespace {

int prec_of(BinOp op) {
  switch (op) {
    case BinOp::Or: return 1;
    case BinOp::And: return 2;
    case BinOp::Eq:
    case BinOp::Ne:
    case BinOp::Lt:
    case BinOp::Le:
    case BinOp::Gt:
    case BinOp::Ge: return 4;
    case BinOp::Add:
    case BinOp::Sub: return 5;
    case BinOp::Mul:
    case BinOp::Div: return 6;
  }
  return 7;
}

const char* op_sym(BinOp op) {
  switch (op) {
    case BinOp::Or: return "OR";
    case BinOp::And: return "AND";
    case BinOp::Eq: return "=";
    case BinOp::Ne: return "!=";
    case BinOp::Lt: return "<";
    case BinOp::Le: return "<=";
    case BinOp::Gt: return ">";
    case BinOp::Ge: return ">=";
    case BinOp::Add: return "+";
    case BinOp::Sub: return "-";
    case BinOp::Mul: return "*";
    case BinOp::Div: return "/";
  }
  return "?";
}

std::string quote_text(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    out.push_back(c);
    if (c == '\'') out.push_back('\'');
  }
  out.push_back('\'');
  return out;
}

std::string render_literal(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Text: return quote_text(v.as_text());
    case ValueKind::Timestamp:
      // Clock labels relex as time tokens; other styles need quotes.
      if (v.as_timestamp().style == TsStyle::Clock) return v.render();
      return quote_text(v.render());
    default: return v.render();
  }
}

std::string render_expr_prec(const Expr& e, int parent);

std::string render_args(const std::vector<ExprPtr>& args) {
  std::string out;
  for (size_t i = 0; i < args.size(); ++i) {
    if (i) out += ", ";
    out += render_expr_prec(*args[i], 0);
  }
  return out;
}

std::string render_expr_prec(const Expr& e, int parent) {
  std::string out;
  int myprec = 7;
  switch (e.kind) {
    case Expr::Kind::Literal: out = render_literal(e.literal); break;
    case Expr::Kind::ColumnRef:
      out = e.qualifier.empty() ? e.name : e.qualifier + "." + e.name;
      break;
    case Expr::Kind::Binary:
      myprec = prec_of(e.op);
      out = render_expr_prec(*e.lhs, myprec) + " " + op_sym(e.op) + " " +
            render_expr_prec(*e.rhs, myprec + 1);
      break;
    case Expr::Kind::Not:
      myprec = 3;
      out = "NOT " + render_expr_prec(*e.lhs, 4);
      break;
    case Expr::Kind::IsNull:
      myprec = 4;
      out = render_expr_prec(*e.lhs, 5) + (e.negated ? " IS NOT NULL" : " IS NULL");
      break;
    case Expr::Kind::Exists:
      out = std::string(e.negated ? "NOT " : "") + "EXISTS (" + render_query(*e.subquery) + ")";
      break;
    case Expr::Kind::ScalarSubquery: out = "(" + render_query(*e.subquery) + ")"; break;
    case Expr::Kind::FuncCall:
      if (e.name == "floor" && e.args.size() == 2) {
        out = "FLOOR(" + render_expr_prec(*e.args[0], 0) + " TO " + e.args[1]->literal.as_text() +
              ")";
      } else if (e.name == "now" && e.args.empty()) {
        out = "now()";
      } else {
        out = e.name + "(" + render_args(e.args) + ")";
      }
      break;
    case Expr::Kind::Aggregate: {
      const char* names[] = {"COUNT", "COUNT", "SUM", "AVG", "MIN", "MAX"};
      out = std::string(names[static_cast<int>(e.agg)]) + "(";
      out += e.agg == AggKind::CountStar ? "*" : render_expr_prec(*e.args[0], 0);
      out += ")";
      break;
    }
    case Expr::Kind::LastScheduleTime: out = "LAST_SCHEDULE_TIME"; break;
  }
  if (myprec < parent) return "(" + out + ")";
  return out;
}

std::string render_window(const WindowClause& w) {
  if (w.hopping_sugar) {
    std::string out = "WINDOW HOPPING(SIZE " + render_expr_prec(*w.range, 0);
    if (w.advance) out += ", ADVANCE BY " + render_expr_prec(*w.advance, 0);
    return out + ")";
  }
  std::string out = "WINDOW (" + render_expr_prec(*w.column, 0);
  if (w.start) out += " START WITH " + render_expr_prec(*w.start, 0);
  out += " RANGE " + render_expr_prec(*w.range, 0);
  if (w.advance) out += " ADVANCE " + render_expr_prec(*w.advance, 0);
  if (w.grace) out += " GRACE " + render_expr_prec(*w.grace, 0);
  out += " BOUNDS (" + w.start_bound + ", " + w.end_bound + ")";
  return out + ")";
}

std::string render_from_item(const FromItem& f) {
  std::string out;
  switch (f.kind) {
    case FromItem::Kind::Table: out = f.table; break;
    case FromItem::Kind::Subquery: out = "(" + render_query(*f.subquery) + ")"; break;
    case FromItem::Kind::Changes: {
      out = "CHANGES(";
      out += f.subquery ? render_query(*f.subquery) : f.changes_table;
      if (f.changes_from) out += ", " + render_expr_prec(*f.changes_from, 0);
      if (f.changes_to) out += ", " + render_expr_prec(*f.changes_to, 0);
      if (!f.changes_format.empty()) out += ", '" + f.changes_format + "'";
      out += ")";
      break;
    }
    case FromItem::Kind::TableFunc:
      out = "TABLE(" + f.func_name + "(" + render_args(f.func_args) + "))";
      break;
    case FromItem::Kind::Group: {
      out = "(";
      for (size_t i = 0; i < f.children.size(); ++i) {
        if (i) out += ", ";
        out += render_from_item(f.children[i]);
      }
      out += ")";
      break;
    }
  }
  if (!f.alias.empty()) out += " " + f.alias;
  if (f.window) out += " " + render_window(*f.window);
  return out;
}

std::string render_spec(const QuerySpec& s) {
  std::string out = "SELECT ";
  if (s.continuous) out += "CONTINUOUS ";
  for (size_t i = 0; i < s.items.size(); ++i) {
    if (i) out += ", ";
    const SelectItem& item = s.items[i];
    if (item.star) {
      out += item.star_qualifier.empty() ? "*" : item.star_qualifier + ".*";
    } else {
      out += render_expr_prec(*item.expr, 0);
      if (!item.alias.empty()) out += " " + item.alias;
    }
  }
  if (!s.from.empty()) {
    out += " FROM ";
    for (size_t i = 0; i < s.from.size(); ++i) {
      if (i) out += ", ";
      out += render_from_item(s.from[i]);
    }
  }
  if (s.where) out += " WHERE " + render_expr_prec(*s.where, 0);
  if (!s.group_by.empty()) {
    out += " GROUP BY ";
    for (size_t i = 0; i < s.group_by.size(); ++i) {
      if (i) out += ", ";
      out += render_expr_prec(*s.group_by[i], 0);
    }
  }
  if (s.finalize) out += " FINALIZE WHERE " + render_expr_prec(*s.finalize, 0);
  if (!s.order_by.empty()) {
    out += " ORDER BY ";
    for (size_t i = 0; i < s.order_by.size(); ++i) {
      if (i) out += ", ";
      out += render_expr_prec(*s.order_by[i].expr, 0);
      if (s.order_by[i].desc) out += " DESC";
    }
  }
  if (s.limit) out += " LIMIT " + std::to_string(*s.limit);
  return out;
}

std::string render_schedule(const Schedule& s, bool present) {
  std::string out;
  if (!present || s.triggers.empty()) return "ON COMMIT";
  for (size_t i = 0; i < s.triggers.size(); ++i) {
    const ScheduleTrigger& t = s.triggers[i];
    if (i) out += " ";
    switch (t.kind) {
      case ScheduleTrigger::Kind::OnCommit:
        out += "ON COMMIT";
        if (t.asynchronous) out += " ASYNCHRONOUSLY";
        if (!t.tables.empty()) {
          out += " ON ";
          for (size_t k = 0; k < t.tables.size(); ++k) {
            if (k) out += ", ";
            out += t.tables[k];
          }
        }
        break;
      case ScheduleTrigger::Kind::Periodic:
        out += "PERIODIC EVERY " + std::to_string(t.period_secs) + " SECONDS";
        break;
      case ScheduleTrigger::Kind::OnDemand: out += "ON DEMAND"; break;
    }
  }
  if (s.end_count) out += " END COUNT " + std::to_string(*s.end_count);
  if (s.end_time) out += " END TIME " + render_expr_prec(*s.end_time, 0);
  return out;
}

}  // namespace

std::string render_expr(const Expr& e) { return render_expr_prec(e, 0); }

std::string render_query(const QueryExpr& q) {
  std::string out;
  if (!q.ctes.empty()) {
    out += "WITH ";
    for (size_t i = 0; i < q.ctes.size(); ++i) {
      if (i) out += ", ";
      out += q.ctes[i].first + " AS (" + render_query(*q.ctes[i].second) + ")";
    }
    out += " ";
  }
  switch (q.kind) {
    case QueryExpr::Kind::Spec: out += render_spec(*q.spec); break;
    case QueryExpr::Kind::Final: out += "FINAL(" + render_query(*q.left) + ")"; break;
    case QueryExpr::Kind::Union:
      out += render_query(*q.left) + (q.union_all ? " UNION ALL " : " UNION ") +
             render_query(*q.right);
      break;
    case QueryExpr::Kind::Intersect:
      out += render_query(*q.left) + " INTERSECT " + render_query(*q.right);
      break;
  }
  return out;
}

std::string render_statement(const Statement& s) {
  using K = Statement::Kind;
  switch (s.kind) {
    case K::Select: return render_query(*s.query) + ";";
    case K::Insert: {
      std::string out = "INSERT INTO " + s.table;
      if (!s.columns.empty()) {
        out += " (";
        for (size_t i = 0; i < s.columns.size(); ++i) {
          if (i) out += ", ";
          out += s.columns[i];
        }
        out += ")";
      }
      if (s.query) return out + " " + render_query(*s.query) + ";";
      out += " VALUES ";
      for (size_t r = 0; r < s.values_rows.size(); ++r) {
        if (r) out += ", ";
        out += "(";
        for (size_t i = 0; i < s.values_rows[r].size(); ++i) {
          if (i) out += ", ";
          out += render_expr(*s.values_rows[r][i]);
        }
        out += ")";
      }
      return out + ";";
    }
    case K::Update: {
      std::string out = "UPDATE " + s.table + " SET ";
      for (size_t i = 0; i < s.assignments.size(); ++i) {
        if (i) out += ", ";
        out += s.assignments[i].first + " = " + render_expr(*s.assignments[i].second);
      }
      if (s.where) out += " WHERE " + render_expr(*s.where);
      return out + ";";
    }
    case K::Delete: {
      std::string out = "DELETE FROM " + s.table;
      if (s.where) out += " WHERE " + render_expr(*s.where);
      return out + ";";
    }
    case K::Begin: return "BEGIN;";
    case K::Commit: return "COMMIT;";
    case K::Rollback: return "ROLLBACK;";
    case K::CreateTable: {
      std::string out = "CREATE TABLE " + s.table + " (";
      for (size_t i = 0; i < s.table_columns.size(); ++i) {
        if (i) out += ", ";
        out += s.table_columns[i].name + " " + column_type_name(s.table_columns[i].type);
      }
      out += ")";
      if (s.insert_only) out += " INSERT ONLY";
      if (s.expire_where) out += " EXPIRE WHERE " + render_expr(*s.expire_where);
      return out + ";";
    }
    case K::AlterTable: {
      std::string out = "ALTER TABLE " + s.table + " ";
      switch (s.alter_verb) {
        case Statement::AlterVerb::InsertOnly: out += "INSERT ONLY"; break;
        case Statement::AlterVerb::DropInsertOnly: out += "DROP INSERT ONLY"; break;
        case Statement::AlterVerb::AddIncreasing:
          out += "CONSTRAINT ";
          if (s.strictly) out += "STRICTLY ";
          out += "INCREASING " + s.constraint_column;
          if (s.grace) out += " GRACE " + render_expr(*s.grace);
          if (!s.constraint_state.enabled) out += " DISABLED";
          if (s.constraint_state.deferred) out += " DEFERRED";
          if (s.constraint_state.rely) out += " RELY";
          break;
        case Statement::AlterVerb::Finalize:
          out += "FINALIZE WHERE " + render_expr(*s.predicate);
          break;
        case Statement::AlterVerb::AddExpire:
          out += "ADD EXPIRE WHERE " + render_expr(*s.predicate);
          break;
        case Statement::AlterVerb::ModifyExpire:
          out += "MODIFY EXPIRE WHERE " + render_expr(*s.predicate);
          break;
        case Statement::AlterVerb::DropExpire: out += "DROP EXPIRE"; break;
      }
      return out + ";";
    }
    case K::CreateTask: {
      std::string out = "CREATE TASK " + s.task_name + " " +
                        render_schedule(s.schedule, s.schedule_present) + " AS ";
      switch (s.task_action) {
        case Statement::TaskAction::InsertSelect: {
          out += "INSERT INTO " + s.task_target;
          if (!s.columns.empty()) {
            out += " (";
            for (size_t i = 0; i < s.columns.size(); ++i) {
              if (i) out += ", ";
              out += s.columns[i];
            }
            out += ")";
          }
          out += " " + render_query(*s.query);
          break;
        }
        case Statement::TaskAction::Merge: {
          const MergeAction& m = *s.merge;
          out += "MERGE INTO " + m.target + " USING (" + render_query(*m.source) + ")";
          if (!m.source_alias.empty()) out += " " + m.source_alias;
          out += " ON " + render_expr(*m.on);
          out += " WHEN MATCHED THEN UPDATE SET ";
          for (size_t i = 0; i < m.update_set.size(); ++i) {
            if (i) out += ", ";
            out += m.update_set[i].first + " = " + render_expr(*m.update_set[i].second);
          }
          if (m.delete_where) out += " DELETE WHERE " + render_expr(*m.delete_where);
          out += " WHEN NOT MATCHED THEN INSERT (";
          for (size_t i = 0; i < m.insert_columns.size(); ++i) {
            if (i) out += ", ";
            out += m.insert_columns[i];
          }
          out += ") VALUES (";
          for (size_t i = 0; i < m.insert_values.size(); ++i) {
            if (i) out += ", ";
            out += render_expr(*m.insert_values[i]);
          }
          out += ")";
          break;
        }
        case Statement::TaskAction::ApplyChanges:
          out += "APPLY CHANGES USING " + render_query(*s.query) + " TO " + s.task_target;
          break;
      }
      if (s.error_policy.log_errors) {
        out += " LOG ERRORS";
        if (!s.error_policy.log_table.empty()) out += " INTO " + s.error_policy.log_table;
        out += " REJECT LIMIT " + std::to_string(s.error_policy.reject_limit);
        out += " RETRY LIMIT " + std::to_string(s.error_policy.retry_limit);
      }
      if (s.initial_snapshot) out += " WITH INITIAL SNAPSHOT";
      return out + ";";
    }
    case K::AlterTask: {
      const char* verbs[] = {"PAUSE", "RESUME", "STOP"};
      return "ALTER TASK " + s.task_name + " " + verbs[static_cast<int>(s.task_verb)] + ";";
    }
    case K::DropTask: return "DROP TASK " + s.task_name + ";";
    case K::ExecuteTask: return "EXECUTE TASK " + s.task_name + ";";
    case K::DeclareCursor:
      return "CREATE CONTINUOUS CURSOR " + s.cursor_name + " AS " + render_query(*s.query) + ";";
    case K::OpenCursor: return "OPEN " + s.cursor_name + ";";
    case K::FetchCursor: {
      std::string out = "FETCH ";
      if (s.fetch_count) out += std::to_string(*s.fetch_count) + " ";
      return out + "FROM " + s.cursor_name + ";";
    }
    case K::CloseCursor: return "CLOSE " + s.cursor_name + ";";
    case K::Subscribe: {
      std::string out = "SUBSCRIBE TO " + render_query(*s.query);
      if (s.schedule_present) out += " " + render_schedule(s.schedule, true);
      return out + ";";
    }
    case K::Set: return "SET " + s.set_name + " = " + s.set_value + ";";
  }
  return ";";
}

}  // namespace streamsql
