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

#include <optional>
#include <vector>

#include "streamsql/catalog.hpp"

namespace streamsql {

enum class ChangeAction { Insert, Update, Delete };

const char* change_action_name(ChangeAction a);

struct ChangeRecord {
  Row payload;
  ChangeAction action = ChangeAction::Insert;
  std::string row_id;
  Timestamp time;
  int64_t commit_seq = 0;
  int64_t event_seq = 0;
};

// Filter window for change capture. Commit bounds are the reliable chaining
// key for cursors and tasks; time bounds implement explicit range arguments.
struct ChangeSpan {
  int64_t from_stamp = 0;  // exclusive
  int64_t to_stamp = 0;    // inclusive
  std::optional<Timestamp> from_time;  // exclusive
  std::optional<Timestamp> to_time;    // inclusive
};

// Full operation history of a base table over the span, one record per
// INSERT/UPDATE/DELETE, an update encoded as DELETE(before) + UPDATE(after).
// Ordered by (commit, event). Expired rows contribute nothing.
std::vector<ChangeRecord> base_table_log(const TableState& table, const ChangeSpan& span);

// Per-RowID consolidation of a base table's history over the span, ordered by
// (RowID, time, DELETE first). Redundant operations are removed: a row both
// inserted and deleted inside the span disappears entirely.
std::vector<ChangeRecord> base_table_delta(const TableState& table, const ChangeSpan& span);

// The consolidation step on its own, for any record stream of one relation.
std::vector<ChangeRecord> compact_records(const std::vector<ChangeRecord>& log);

}  // namespace streamsql
