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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamsql/catalog.hpp"
#include "streamsql/changes.hpp"

namespace streamsql {

class Engine;

struct OutCol {
  std::string name;
  std::string qualifier;
  bool hidden = false;  // CommitSeq: projectable by name, excluded from '*'
  std::optional<ColumnType> type;
};

// Materialized relation produced by evaluation. Row order is deterministic by
// construction (scan order, sorted group keys, change-stream order).
struct Rel {
  std::vector<OutCol> cols;
  std::vector<Row> rows;
  // Carried metadata for FINAL classification.
  ExprPtr finalize_pred;
  bool insert_only_source = false;

  int find_col(const std::string& name) const {
    for (size_t i = 0; i < cols.size(); ++i)
      if (ident_eq(cols[i].name, name)) return static_cast<int>(i);
    return -1;
  }
};

enum class ExpiredGuardMode { Ignore, Error };

struct EvalOptions {
  int64_t stamp = 0;
  bool include_pending = false;
  Timestamp now;
  // Binding for implicit CHANGES start positions (cursors, tasks).
  std::optional<int64_t> resume_stamp;
  Timestamp resume_time;
  // FINAL ledger owner; when set, newly-final results advance its state.
  Cursor* cursor = nullptr;
  ExpiredGuardMode expired_guard = ExpiredGuardMode::Ignore;
  bool in_final = false;
};

Rel eval_query_rel(const Engine& eng, const QueryExpr& q, const EvalOptions& opt);

// Evaluates a scalar predicate/expression against one row of a table.
Value eval_expr_on_table_row(const Engine& eng, const Expr& e, const TableState& table,
                             const Row& row, int64_t stamp, Timestamp now);

// Scalar evaluation with no row scope (now(), constants, scalar subqueries).
Value eval_scalar(const Engine& eng, const Expr& e, int64_t stamp, Timestamp now);

struct BagDelta {
  std::vector<Row> added;
  std::vector<Row> removed;
};
BagDelta bag_diff(const std::vector<Row>& before, const std::vector<Row>& after);

bool query_has_implicit_changes(const QueryExpr& q);
// Base tables syntactically reachable from the query (dependency set).
std::vector<std::string> query_base_tables(const QueryExpr& q);

// Conservative satisfiability of (a AND b) over single-table rows, used for
// purge-horizon detection. now_a/now_b fold time functions per predicate.
bool predicates_may_overlap(const Engine& eng, const TableState& table, const Expr* a,
                            Timestamp now_a, const Expr& b, Timestamp now_b, int64_t stamp);

std::string first_time_column(const Expr& pred, const TableState& table);

}  // namespace streamsql
