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
#include <algorithm>

#include <json.hpp>

#include "streamsql/analysis.hpp"
#include "streamsql/engine.hpp"
#include "streamsql/eval.hpp"
#include "streamsql/parser.hpp"

namespace streamsql {

void Engine::exec_create_table(const Statement& s, ExecResult& out) {
  require_no_txn("CREATE TABLE");
  if (find_table(s.table)) raise(ErrorCode::DuplicateTable, "table " + s.table + " exists");
  TableState t;
  t.name = s.table;
  t.schema = s.table_columns;
  t.insert_only = s.insert_only;
  t.expire_predicate = s.expire_where;
  tables_[to_upper(s.table)] = std::move(t);
  commit_now({});
  out.lines.push_back("table " + s.table + " created");
}

void Engine::exec_alter_table(const Statement& s, ExecResult& out) {
  require_no_txn("ALTER TABLE");
  TableState& t = need_table(s.table);
  std::string note = "table " + s.table + " altered";
  switch (s.alter_verb) {
    case Statement::AlterVerb::InsertOnly:
      // Legal on tables with history; governs future DML only.
      t.insert_only = true;
      break;
    case Statement::AlterVerb::DropInsertOnly: {
      for (const auto& [_, c] : cursors_) {
        if (c.status != CursorStatus::Open) continue;
        for (const auto& dep : c.dependencies)
          if (ident_eq(dep, t.name))
            raise(ErrorCode::SemanticError,
                  "cannot drop INSERT ONLY from " + t.name + " while cursor " + c.name +
                      " is open on it");
      }
      t.insert_only = false;
      break;
    }
    case Statement::AlterVerb::AddIncreasing: {
      int ci = t.col_index(s.constraint_column);
      if (ci < 0)
        raise(ErrorCode::UnresolvedName,
              "unknown column " + s.constraint_column + " in " + t.name);
      IncreasingConstraint inc;
      inc.column = t.schema[ci].name;
      inc.strict = s.strictly;
      if (s.grace) {
        Value g = eval_scalar(*this, *s.grace, commit_seq_, now_);
        if (g.kind() == ValueKind::Interval)
          inc.grace_secs = g.as_interval().secs;
        else if (g.kind() == ValueKind::Int)
          inc.grace_secs = g.as_int();
        else
          raise(ErrorCode::TypeError, "GRACE must be an interval or number");
      }
      inc.enabled = s.constraint_state.enabled;
      inc.deferred = s.constraint_state.deferred;
      inc.rely = s.constraint_state.rely;
      // Enabling takes the current maximum of the column as the floor.
      if (inc.enabled) {
        for (const RowVersion& v : t.versions) {
          if (!v.visible(commit_seq_, false)) continue;
          const Value& val = v.payload[ci];
          if (val.is_null()) continue;
          if (inc.c_max.is_null() || *val.compare(inc.c_max) > 0) inc.c_max = val;
        }
      }
      t.increasing = inc;
      break;
    }
    case Statement::AlterVerb::Finalize: {
      std::string why;
      if (check_monotone_predicate(*this, *s.predicate, t, &why) != Monotonicity::Monotone)
        raise(ErrorCode::NonMonotonePredicate,
              "finalization predicate must be monotone: " + why);
      t.finalizers.push_back({s.predicate, commit_seq_});
      break;
    }
    case Statement::AlterVerb::AddExpire:
      if (t.expire_predicate)
        raise(ErrorCode::PolicyExists, t.name + " already has an expiration policy; use MODIFY");
      t.expire_predicate = s.predicate;
      break;
    case Statement::AlterVerb::ModifyExpire: {
      if (!t.expire_predicate) raise(ErrorCode::NoPolicy, t.name + " has no expiration policy");
      // A disjunction extending the old policy widens it; recommend stricter
      // predicates instead.
      std::string old_text = render_expr(*t.expire_predicate);
      const Expr& p = *s.predicate;
      if (p.kind == Expr::Kind::Binary && p.op == BinOp::Or &&
          (render_expr(*p.lhs) == old_text || render_expr(*p.rhs) == old_text))
        out.lines.push_back(
            "warning: new expiration policy is broader than the existing one");
      t.expire_predicate = s.predicate;
      break;
    }
    case Statement::AlterVerb::DropExpire:
      if (!t.expire_predicate) raise(ErrorCode::NoPolicy, t.name + " has no expiration policy");
      t.expire_predicate = nullptr;
      break;
  }
  commit_now({});
  out.lines.push_back(note);
}

void Engine::exec_set(const Statement& s, ExecResult& out) {
  if (s.set_name == "EXPIRED_READS") {
    if (s.set_value == "IGNORE")
      expired_reads_ = ExpiredReads::Ignore;
    else if (s.set_value == "ERROR")
      expired_reads_ = ExpiredReads::Error;
    else if (s.set_value == "DEFAULT")
      expired_reads_ = ExpiredReads::SessionDefault;
    else
      raise(ErrorCode::SemanticError, "EXPIRED_READS accepts IGNORE, ERROR or DEFAULT");
    out.lines.push_back("ok");
    return;
  }
  raise(ErrorCode::SemanticError, "unknown session setting " + s.set_name);
}

// ---------------------------------------------------------------------------
// accessors used by tests, oracles and the script runner

std::vector<Row> Engine::table_snapshot(const std::string& table, int64_t stamp) const {
  const TableState& t = need_table(table);
  std::vector<Row> rows;
  for (const RowVersion& v : t.versions)
    if (v.visible(stamp, false)) rows.push_back(v.payload);
  return rows;
}

std::vector<ChangeRecord> Engine::table_changes(const std::string& table, int64_t from_stamp,
                                                int64_t to_stamp,
                                                const std::string& format) const {
  const TableState& t = need_table(table);
  std::string fmt = to_upper(format);
  if (fmt != "DELTA" && fmt != "LOG")
    raise(ErrorCode::UnknownFormat, "unknown CHANGES format '" + format + "'");
  if (from_stamp > to_stamp) raise(ErrorCode::InvalidRange, "change range is inverted");
  ChangeSpan span{from_stamp, to_stamp, std::nullopt, std::nullopt};
  return fmt == "LOG" ? base_table_log(t, span) : base_table_delta(t, span);
}

void Engine::inject_task_fault(const std::string& task, int n) {
  auto it = tasks_.find(to_upper(task));
  if (it == tasks_.end()) raise(ErrorCode::UnknownTask, "unknown task " + task);
  it->second.fault_injections += n;
}

std::string Engine::prove_text(const std::string& sql) const {
  // Proof runs against the current catalog; statements are not executed.
  std::string out;
  for (const StatementPtr& s : parse(sql)) {
    if (s->kind != Statement::Kind::Select) continue;
    out += "> " + render_statement(*s) + "\n";
    try {
      Proof p = prove_insert_only(*this, *s->query);
      out += render_proof(p);
    } catch (const EngineError& e) {
      out += std::string("error: ") + error_code_name(e.code) + ": " + e.message + "\n";
    }
  }
  return out;
}

std::string Engine::dump_catalog_json() const {
  nlohmann::json doc;
  doc["now"] = now_.render();
  doc["commit_seq"] = commit_seq_;
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& [_, t] : tables_) {
    nlohmann::json jt;
    jt["name"] = t.name;
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : t.schema)
      cols.push_back({{"name", c.name}, {"type", column_type_name(c.type)}});
    jt["columns"] = cols;
    jt["insert_only"] = t.insert_only;
    jt["rows"] = table_snapshot(t.name, commit_seq_).size();
    if (t.increasing) {
      nlohmann::json inc;
      inc["column"] = t.increasing->column;
      inc["strict"] = t.increasing->strict;
      if (t.increasing->grace_secs) inc["grace_seconds"] = *t.increasing->grace_secs;
      inc["enabled"] = t.increasing->enabled;
      inc["deferred"] = t.increasing->deferred;
      inc["rely"] = t.increasing->rely;
      if (!t.increasing->c_max.is_null()) inc["current_max"] = t.increasing->c_max.render();
      jt["increasing"] = inc;
    }
    if (!t.finalizers.empty()) {
      nlohmann::json fs = nlohmann::json::array();
      for (const auto& f : t.finalizers) fs.push_back(render_expr(*f.predicate));
      jt["finalize"] = fs;
    }
    if (t.expire_predicate) jt["expire"] = render_expr(*t.expire_predicate);
    if (!t.purge_horizons.empty()) {
      nlohmann::json hs = nlohmann::json::array();
      for (const auto& h : t.purge_horizons)
        hs.push_back({{"predicate", render_expr(*h.predicate)}, {"at", h.pass_time.render()}});
      jt["purge_horizons"] = hs;
    }
    tables.push_back(jt);
  }
  doc["tables"] = tables;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& [_, t] : tasks_) {
    nlohmann::json jt;
    jt["name"] = t.name;
    jt["state"] = t.state == TaskState::Active    ? "ACTIVE"
                  : t.state == TaskState::Paused  ? "PAUSED"
                                                  : "STOPPED";
    jt["last_execution_time"] = t.last_exec_time.render();
    jt["last_execution_stamp"] = t.last_exec_stamp;
    jt["definition"] = render_statement(*t.def);
    tasks.push_back(jt);
  }
  doc["tasks"] = tasks;
  nlohmann::json cursors = nlohmann::json::array();
  for (const auto& [_, c] : cursors_) {
    nlohmann::json jc;
    jc["name"] = c.name;
    jc["status"] = c.status == CursorStatus::Open       ? "OPEN"
                   : c.status == CursorStatus::Declared ? "DECLARED"
                                                        : "CLOSED";
    jc["resume_stamp"] = c.resume_stamp;
    jc["query"] = render_query(*c.query);
    cursors.push_back(jc);
  }
  doc["cursors"] = cursors;
  return doc.dump(2);
}

}  // namespace streamsql
