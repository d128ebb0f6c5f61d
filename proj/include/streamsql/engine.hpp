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
#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "streamsql/catalog.hpp"
#include "streamsql/changes.hpp"

namespace streamsql {

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<Row> rows;
};

struct ExecResult {
  bool ok = true;
  EngineError error{ErrorCode::SemanticError, ""};
  std::vector<std::string> lines;  // rendered output, one line each
  ResultTable table;               // structured rows for SELECT / FETCH
  bool has_table = false;
  bool no_data = false;
};

enum class ExpiredReads { SessionDefault, Ignore, Error };

struct TaskRunReport {
  std::string task;
  int64_t inserted = 0, updated = 0, deleted = 0;
};

// Single-owner deterministic engine: one mutator, no internal parallelism,
// all asynchrony modeled as cooperative steps driven by clock advancement.
class Engine {
 public:
  Engine();

  // Parses and executes one or more statements; outputs are concatenated.
  // Errors are reported in the result, never thrown.
  ExecResult execute(const std::string& sql);
  ExecResult execute_statement(const Statement& stmt);

  // Clock and lifecycle steps (script directives).
  void advance_clock(Timestamp to);
  int64_t expire_pass();
  int64_t purge_pass();

  Timestamp now() const { return now_; }
  int64_t current_stamp() const { return commit_seq_; }

  // Committed payload bag of a table as of a commit stamp, in row id order.
  std::vector<Row> table_snapshot(const std::string& table, int64_t stamp) const;
  std::vector<Row> table_snapshot(const std::string& table) const {
    return table_snapshot(table, commit_seq_);
  }

  // Change capture over (from_stamp, to_stamp]; format DELTA or LOG.
  std::vector<ChangeRecord> table_changes(const std::string& table, int64_t from_stamp,
                                          int64_t to_stamp, const std::string& format) const;

  // Evaluates a one-shot query at a stamp (testing/oracle access).
  ResultTable query(const std::string& select_sql) const;
  ResultTable query_at(const std::string& select_sql, int64_t stamp) const;

  // Deterministic fault hook: the next n executions of the task fail.
  void inject_task_fault(const std::string& task, int n);

  const TableState* find_table(const std::string& name) const;
  TableState* find_table(const std::string& name);
  const std::map<std::string, Task>& tasks() const { return tasks_; }
  const std::map<std::string, Cursor>& cursors() const { return cursors_; }

  // Commit history: commit_times_[s] is the clock value of stamp s, and
  // commit_touched()[s] the tables that commit wrote.
  const std::vector<Timestamp>& commit_times() const { return commit_times_; }
  const std::vector<std::set<std::string>>& commit_touched() const { return commit_touched_; }

  Timestamp epoch() const { return epoch_; }
  void set_epoch(Timestamp t) { epoch_ = t; }

  std::string dump_catalog_json() const;

  // Insert-only proof trace for the prove subcommand.
  std::string prove_text(const std::string& sql) const;

  bool txn_open() const { return txn_open_; }

 private:
  friend struct EvalAccess;

  // -- state ----------------------------------------------------------------
  Timestamp now_;
  int64_t commit_seq_ = 0;
  std::vector<Timestamp> commit_times_;  // index = stamp (0 = before any commit)
  std::vector<std::set<std::string>> commit_touched_;
  int64_t event_seq_ = 0;

  std::map<std::string, TableState> tables_;  // keyed by uppercase name
  std::map<std::string, Task> tasks_;
  std::map<std::string, Cursor> cursors_;
  std::vector<Subscription> subscriptions_;
  std::map<std::string, QueryPtr> session_ctes_;  // unused placeholder for views

  bool txn_open_ = false;
  std::set<std::string> txn_touched_;
  std::map<std::string, Value> txn_cmax_;  // statement-visible running max

  std::deque<std::string> async_queue_;
  int64_t task_creation_seq_ = 0;
  int64_t subscription_seq_ = 0;
  ExpiredReads expired_reads_ = ExpiredReads::SessionDefault;
  Timestamp epoch_;
  bool in_commit_ = false;

  std::vector<std::string> side_lines_;  // task reports + deliveries

  // -- helpers ----------------------------------------------------------------
  TableState& need_table(const std::string& name);
  const TableState& need_table(const std::string& name) const;

  void exec_select(const Statement& s, ExecResult& out);
  void exec_insert(const Statement& s, ExecResult& out);
  void exec_update(const Statement& s, ExecResult& out);
  void exec_delete(const Statement& s, ExecResult& out);
  void exec_begin(ExecResult& out);
  void exec_commit(ExecResult& out);
  void exec_rollback(ExecResult& out);
  void exec_create_table(const Statement& s, ExecResult& out);
  void exec_alter_table(const Statement& s, ExecResult& out);
  void exec_create_task(const Statement& s, ExecResult& out);
  void exec_alter_task(const Statement& s, ExecResult& out);
  void exec_drop_task(const Statement& s, ExecResult& out);
  void exec_execute_task(const Statement& s, ExecResult& out);
  void exec_declare_cursor(const Statement& s, ExecResult& out);
  void exec_open_cursor(const Statement& s, ExecResult& out);
  void exec_fetch(const Statement& s, ExecResult& out);
  void exec_close_cursor(const Statement& s, ExecResult& out);
  void exec_subscribe(const Statement& s, ExecResult& out);
  void exec_set(const Statement& s, ExecResult& out);

  void require_no_txn(const char* what) const;
  void auto_begin();
  void ensure_txn();

  // DML internals (shared by statements and task bodies).
  int64_t insert_rows(TableState& table, const std::vector<Row>& rows,
                      const std::vector<std::string>& columns);
  int64_t update_rows(TableState& table, const ExprPtr& where,
                      const std::vector<std::pair<std::string, ExprPtr>>& assignments);
  int64_t delete_rows(TableState& table, const ExprPtr& where);

  void check_increasing_insert(TableState& table, const std::vector<Row>& rows);
  void check_finalize_insert(TableState& table, const Row& row);
  void check_finalize_mutation(TableState& table, const Row& row, bool is_update);
  Value& effective_cmax(TableState& table);
  void commit_now(std::set<std::string> touched);
  void run_commit_hooks(int64_t stamp, std::set<std::string> touched);

  // Task machinery.
  TaskRunReport fire_task(Task& task, bool standalone);
  TaskRunReport run_task_body(Task& task);
  bool task_past_end(const Task& t) const;
  void flush_error_log();
  void deliver_subscriptions(const std::set<std::string>& touched, bool tick);
  std::vector<std::pair<std::string, Row>> pending_error_rows_;

  // Cursor machinery.
  struct FetchOutcome {
    ResultTable rows;
    std::vector<std::string> lines;
    bool no_data = false;
  };
  FetchOutcome fetch_cursor(Cursor& cur, std::optional<int64_t> max_rows);

  // Expired read guard state.
  friend class Evaluator;

  // Rollback support: deep copy of all mutable table/task/cursor state.
  struct StateBackup;
  std::shared_ptr<StateBackup> backup_state() const;
  void restore_state(const StateBackup& b);
};

std::string render_value_for_output(const Value& v);
std::vector<std::string> render_result_table(const ResultTable& t);
std::string render_fetch_row(const ResultTable& t, size_t row_index);

}  // namespace streamsql
