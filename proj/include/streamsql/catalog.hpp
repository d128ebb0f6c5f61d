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
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "streamsql/ast.hpp"
#include "streamsql/value.hpp"

namespace streamsql {

struct IncreasingConstraint {
  std::string column;
  bool strict = false;
  std::optional<int64_t> grace_secs;
  bool enabled = true;
  bool deferred = false;
  bool rely = false;
  Value c_max;  // null until a committed value exists
};

struct FinalizeConstraint {
  ExprPtr predicate;
  int64_t added_stamp = 0;
};

// Metadata describing already-purged rows: the policy predicate as evaluated
// at pass time, so reads in ERROR mode can still detect purged-region access.
struct PurgeHorizon {
  ExprPtr predicate;
  Timestamp pass_time;
};

// One stored row version. An UPDATE closes the old version and opens a new
// one with the same row_id; row ids are never recycled.
struct RowVersion {
  int64_t row_id = 0;
  Row payload;
  Timestamp insert_time;
  std::optional<Timestamp> delete_time;
  std::optional<int64_t> insert_commit;  // absent while uncommitted
  std::optional<int64_t> delete_commit;
  int64_t insert_event = 0;  // global event sequence, orders ops inside a commit
  int64_t delete_event = 0;
  bool inserted_by_update = false;
  bool deleted_by_update = false;
  bool expired = false;

  bool visible(int64_t stamp, bool include_pending) const {
    if (expired) return false;
    bool inserted = insert_commit ? *insert_commit <= stamp : include_pending;
    if (!inserted) return false;
    if (delete_time) {
      bool deleted = delete_commit ? *delete_commit <= stamp : include_pending;
      if (deleted) return false;
    }
    return true;
  }
};

struct TableState {
  std::string name;
  std::vector<ColumnDef> schema;
  std::vector<RowVersion> versions;
  bool insert_only = false;
  std::optional<IncreasingConstraint> increasing;
  std::vector<FinalizeConstraint> finalizers;
  ExprPtr expire_predicate;  // at most one policy per table
  std::vector<PurgeHorizon> purge_horizons;
  int64_t next_row_id = 1;

  int col_index(const std::string& col) const {
    for (size_t i = 0; i < schema.size(); ++i)
      if (ident_eq(schema[i].name, col)) return static_cast<int>(i);
    return -1;
  }
};

// Printed row id: 8-digit zero-padded counter for stored rows, 16-digit hex
// for synthetic identities of derived relations.
std::string format_row_id(int64_t id);
std::string format_synthetic_row_id(uint64_t hash);

enum class TaskState { Active, Paused, Stopped };

struct Task {
  std::string name;
  StatementPtr def;  // the CREATE TASK statement
  Schedule schedule;
  TaskState state = TaskState::Active;
  Timestamp last_exec_time;
  int64_t last_exec_stamp = 0;
  ErrorPolicy policy;
  bool snapshot_pending = false;
  int64_t creation_seq = 0;
  int64_t exec_count = 0;
  std::optional<int64_t> next_periodic_due;  // absolute seconds
  int fault_injections = 0;                  // deterministic test hook
  std::vector<std::string> dependencies;     // base tables of the source
};

enum class CursorStatus { Declared, Open, Closed };

struct Cursor {
  std::string name;
  QueryPtr query;
  CursorStatus status = CursorStatus::Declared;
  int64_t resume_stamp = 0;
  bool is_final = false;
  // FINAL bookkeeping: windows with index < frontier have been emitted;
  // emitted_rows counts deliveries per row identity for row-final queries.
  int64_t window_frontier = 0;
  std::map<uint64_t, int64_t> emitted_rows;
  std::vector<std::string> dependencies;
  std::vector<Row> pending;  // rows computed but not yet delivered (max_rows)
};

struct Subscription {
  std::string name;
  std::string cursor_name;
  Schedule schedule;
  bool schedule_present = false;
};

}  // namespace streamsql
