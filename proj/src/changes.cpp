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
#include "streamsql/changes.hpp"

#include <algorithm>
#include <cstdio>

namespace streamsql {

const char* change_action_name(ChangeAction a) {
  switch (a) {
    case ChangeAction::Insert: return "INSERT";
    case ChangeAction::Update: return "UPDATE";
    case ChangeAction::Delete: return "DELETE";
  }
  return "?";
}

std::string format_row_id(int64_t id) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%08lld", static_cast<long long>(id));
  return buf;
}

std::string format_synthetic_row_id(uint64_t hash) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

namespace {

bool in_span(const ChangeSpan& span, int64_t commit, const Timestamp& t) {
  if (commit <= span.from_stamp || commit > span.to_stamp) return false;
  if (span.from_time && t.secs <= span.from_time->secs) return false;
  if (span.to_time && t.secs > span.to_time->secs) return false;
  return true;
}

// One logical operation on one row, reconstructed from version stamps.
struct LogicalOp {
  enum Kind { Ins, Upd, Del } kind;
  int64_t row_id;
  Row before, after;
  Timestamp time;       // of the op; for Upd the update time
  int64_t commit = 0;
  int64_t event = 0;
};

std::vector<LogicalOp> logical_ops(const TableState& table, const ChangeSpan& span) {
  std::vector<LogicalOp> ops;
  // Pair each update's closing and opening versions by (row_id, delete/insert
  // event adjacency): the opening version carries inserted_by_update.
  for (const RowVersion& v : table.versions) {
    if (v.expired) continue;
    if (v.insert_commit && !v.inserted_by_update &&
        in_span(span, *v.insert_commit, v.insert_time)) {
      LogicalOp op{LogicalOp::Ins, v.row_id, {}, v.payload, v.insert_time, *v.insert_commit,
                   v.insert_event};
      ops.push_back(std::move(op));
    }
    if (v.insert_commit && v.inserted_by_update &&
        in_span(span, *v.insert_commit, v.insert_time)) {
      // Find the version this update closed: same row_id, delete_event just
      // below our insert_event.
      const RowVersion* closed = nullptr;
      for (const RowVersion& u : table.versions) {
        if (u.row_id == v.row_id && u.deleted_by_update && u.delete_event == v.insert_event - 1)
          closed = &u;
      }
      LogicalOp op{LogicalOp::Upd, v.row_id, closed ? closed->payload : Row{}, v.payload,
                   v.insert_time, *v.insert_commit, v.insert_event};
      ops.push_back(std::move(op));
    }
    if (v.delete_time && v.delete_commit && !v.deleted_by_update &&
        in_span(span, *v.delete_commit, *v.delete_time)) {
      LogicalOp op{LogicalOp::Del, v.row_id, v.payload, {}, *v.delete_time, *v.delete_commit,
                   v.delete_event};
      ops.push_back(std::move(op));
    }
  }
  std::sort(ops.begin(), ops.end(), [](const LogicalOp& a, const LogicalOp& b) {
    if (a.commit != b.commit) return a.commit < b.commit;
    return a.event < b.event;
  });
  return ops;
}

void encode(const LogicalOp& op, std::vector<ChangeRecord>& out) {
  switch (op.kind) {
    case LogicalOp::Ins:
      out.push_back({op.after, ChangeAction::Insert, format_row_id(op.row_id), op.time, op.commit,
                     op.event});
      break;
    case LogicalOp::Upd:
      // The paper's single-update encoding: the pre-image prints as a DELETE
      // and the post-image as an UPDATE, same RowID and Time.
      out.push_back({op.before, ChangeAction::Delete, format_row_id(op.row_id), op.time, op.commit,
                     op.event});
      out.push_back({op.after, ChangeAction::Update, format_row_id(op.row_id), op.time, op.commit,
                     op.event});
      break;
    case LogicalOp::Del:
      out.push_back({op.before, ChangeAction::Delete, format_row_id(op.row_id), op.time, op.commit,
                     op.event});
      break;
  }
}

int action_rank(ChangeAction a) { return a == ChangeAction::Delete ? 0 : 1; }

void sort_delta(std::vector<ChangeRecord>& recs) {
  std::stable_sort(recs.begin(), recs.end(), [](const ChangeRecord& a, const ChangeRecord& b) {
    if (a.row_id != b.row_id) return a.row_id < b.row_id;
    if (a.time.secs != b.time.secs) return a.time.secs < b.time.secs;
    return action_rank(a.action) < action_rank(b.action);
  });
}

}  // namespace

std::vector<ChangeRecord> base_table_log(const TableState& table, const ChangeSpan& span) {
  std::vector<ChangeRecord> out;
  for (const LogicalOp& op : logical_ops(table, span)) encode(op, out);
  return out;
}

std::vector<ChangeRecord> base_table_delta(const TableState& table, const ChangeSpan& span) {
  std::vector<LogicalOp> ops = logical_ops(table, span);

  // Group per row id, order preserved inside each group.
  std::map<int64_t, std::vector<const LogicalOp*>> groups;
  for (const LogicalOp& op : ops) groups[op.row_id].push_back(&op);

  std::vector<ChangeRecord> out;
  for (auto& [row_id, group] : groups) {
    const LogicalOp& first = *group.front();
    const LogicalOp& last = *group.back();
    if (last.kind == LogicalOp::Del) {
      // INSERT ... DELETE inside the span cancels out entirely.
      if (first.kind == LogicalOp::Ins) continue;
      LogicalOp net{LogicalOp::Del, row_id, last.before, {}, last.time, last.commit, last.event};
      encode(net, out);
    } else if (first.kind == LogicalOp::Ins) {
      // INSERT (UPDATE)* collapses to one INSERT with the final image.
      LogicalOp net{LogicalOp::Ins, row_id, {}, last.after, last.time, last.commit, last.event};
      encode(net, out);
    } else {
      // (UPDATE)+: pre-image of the first, post-image of the last.
      out.push_back({first.before, ChangeAction::Delete, format_row_id(row_id), first.time,
                     first.commit, first.event});
      out.push_back({last.after, ChangeAction::Update, format_row_id(row_id), last.time,
                     last.commit, last.event});
    }
  }
  sort_delta(out);
  return out;
}

std::vector<ChangeRecord> compact_records(const std::vector<ChangeRecord>& log) {
  // Reconstruct per-row op sequences from the encoded stream: a DELETE
  // immediately followed by an UPDATE with the same row id and time is one
  // logical update.
  std::map<std::string, std::vector<ChangeRecord>> groups;
  std::vector<std::string> order;
  for (const ChangeRecord& r : log) {
    if (!groups.count(r.row_id)) order.push_back(r.row_id);
    groups[r.row_id].push_back(r);
  }
  std::vector<ChangeRecord> out;
  for (const std::string& id : order) {
    auto& recs = groups[id];
    // Collapse encoded update pairs.
    std::vector<ChangeRecord> ops;
    for (size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].action == ChangeAction::Delete && i + 1 < recs.size() &&
          recs[i + 1].action == ChangeAction::Update) {
        ChangeRecord upd = recs[i + 1];
        ops.push_back(upd);
        ++i;
      } else {
        ops.push_back(recs[i]);
      }
    }
    const ChangeRecord& first = ops.front();
    const ChangeRecord& last = ops.back();
    if (last.action == ChangeAction::Delete) {
      if (first.action == ChangeAction::Insert) continue;
      out.push_back(last);
    } else if (first.action == ChangeAction::Insert) {
      ChangeRecord net = last;
      net.action = ChangeAction::Insert;
      out.push_back(net);
    } else if (first.action == ChangeAction::Update || first.action == ChangeAction::Delete) {
      // Needs the first op's pre-image, which the encoded stream carries as
      // the DELETE half of the first update pair.
      const ChangeRecord* pre = nullptr;
      for (const ChangeRecord& r : recs) {
        if (r.action == ChangeAction::Delete) {
          pre = &r;
          break;
        }
      }
      if (pre) out.push_back(*pre);
      ChangeRecord net = last;
      net.action = ChangeAction::Update;
      out.push_back(net);
    }
  }
  sort_delta(out);
  return out;
}

}  // namespace streamsql
