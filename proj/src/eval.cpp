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
#include "streamsql/eval.hpp"

#include <algorithm>
#include <functional>

#include "streamsql/analysis.hpp"
#include "streamsql/engine.hpp"

namespace streamsql {

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

struct Scope {
  struct Frame {
    const Rel* rel;
    const Row* row;
  };
  std::vector<Frame> frames;
  const Scope* outer = nullptr;
  // Group rows (wide-row pointers) for aggregate evaluation.
  const std::vector<const Row*>* group = nullptr;
  const Rel* group_rel = nullptr;
};

struct ResolvedCol {
  const Scope::Frame* frame = nullptr;
  int index = -1;
};

ResolvedCol resolve_column(const Scope* scope, const std::string& qualifier,
                           const std::string& name) {
  for (const Scope* s = scope; s; s = s->outer) {
    for (const auto& frame : s->frames) {
      const Rel& rel = *frame.rel;
      for (size_t i = 0; i < rel.cols.size(); ++i) {
        const OutCol& c = rel.cols[i];
        if (!ident_eq(c.name, name)) continue;
        if (!qualifier.empty() && !ident_eq(c.qualifier, qualifier)) continue;
        return {&frame, static_cast<int>(i)};
      }
    }
  }
  return {};
}

bool is_true(const Value& v) { return v.kind() == ValueKind::Bool && v.as_bool(); }

}  // namespace

// ---------------------------------------------------------------------------
// Evaluator

class Evaluator {
 public:
  Evaluator(const Engine& eng, const EvalOptions& opt) : eng_(eng), opt_(opt) {}

  Rel query(const QueryExpr& q, const Scope* outer, bool top_level) {
    // Register CTEs for the subtree.
    std::vector<std::string> added;
    for (const auto& [name, body] : q.ctes) {
      std::string key = to_upper(name);
      cte_ast_[key] = body;
      cte_cache_.erase(key);
      added.push_back(key);
    }
    Rel out;
    switch (q.kind) {
      case QueryExpr::Kind::Spec: out = spec(*q.spec, outer); break;
      case QueryExpr::Kind::Final:
        out = eval_final(*q.left, outer, top_level ? opt_.cursor : nullptr);
        break;
      case QueryExpr::Kind::Union: {
        Rel l = query(*q.left, outer, false);
        Rel r = query(*q.right, outer, false);
        out = l;
        for (auto& row : r.rows) out.rows.push_back(row);
        if (!q.union_all) {
          std::vector<Row> dedup;
          for (auto& row : out.rows) {
            bool seen = false;
            for (auto& d : dedup)
              if (compare_rows(d, row) == 0) {
                seen = true;
                break;
              }
            if (!seen) dedup.push_back(row);
          }
          out.rows = std::move(dedup);
        }
        break;
      }
      case QueryExpr::Kind::Intersect: {
        Rel l = query(*q.left, outer, false);
        Rel r = query(*q.right, outer, false);
        out = l;
        out.rows.clear();
        std::vector<bool> used(r.rows.size(), false);
        for (auto& row : l.rows) {
          for (size_t i = 0; i < r.rows.size(); ++i) {
            if (!used[i] && compare_rows(row, r.rows[i]) == 0) {
              used[i] = true;
              out.rows.push_back(row);
              break;
            }
          }
        }
        break;
      }
    }
    for (auto& key : added) {
      cte_ast_.erase(key);
      cte_cache_.erase(key);
    }
    return out;
  }

  // -- expression evaluation ------------------------------------------------

  Value eval_expr(const Expr& e, const Scope* scope) {
    switch (e.kind) {
      case Expr::Kind::Literal: return e.literal;
      case Expr::Kind::ColumnRef: {
        ResolvedCol rc = resolve_column(scope, e.qualifier, e.name);
        if (!rc.frame)
          raise(ErrorCode::UnresolvedName,
                "unknown column " + (e.qualifier.empty() ? e.name : e.qualifier + "." + e.name));
        return (*rc.frame->row)[rc.index];
      }
      case Expr::Kind::Binary: return eval_binary(e, scope);
      case Expr::Kind::Not: {
        Value v = eval_expr(*e.lhs, scope);
        if (v.is_null()) return Value::null();
        if (v.kind() != ValueKind::Bool) raise(ErrorCode::TypeError, "NOT over non-boolean");
        return Value::boolean(!v.as_bool());
      }
      case Expr::Kind::IsNull: {
        Value v = eval_expr(*e.lhs, scope);
        return Value::boolean(e.negated ? !v.is_null() : v.is_null());
      }
      case Expr::Kind::Exists: {
        Rel r = query(*e.subquery, scope, false);
        return Value::boolean(e.negated ? r.rows.empty() : !r.rows.empty());
      }
      case Expr::Kind::ScalarSubquery: {
        Rel r = query(*e.subquery, scope, false);
        if (r.rows.empty()) return Value::null();
        if (r.rows.size() > 1 || r.rows[0].size() != 1)
          raise(ErrorCode::TypeError, "scalar subquery must return one row, one column");
        return r.rows[0][0];
      }
      case Expr::Kind::FuncCall: return eval_func(e, scope);
      case Expr::Kind::Aggregate: return eval_aggregate(e, scope);
      case Expr::Kind::LastScheduleTime:
        if (!opt_.resume_stamp)
          raise(ErrorCode::SemanticError,
                "LAST_SCHEDULE_TIME is only meaningful inside a continuous task");
        return Value::timestamp(opt_.resume_time);
    }
    raise(ErrorCode::SemanticError, "unreachable expression kind");
  }

  Value eval_binary(const Expr& e, const Scope* scope) {
    if (e.op == BinOp::And || e.op == BinOp::Or) {
      Value l = eval_expr(*e.lhs, scope);
      Value r = eval_expr(*e.rhs, scope);
      auto tri = [](const Value& v) -> int {  // 1 true, 0 false, -1 unknown
        if (v.is_null()) return -1;
        if (v.kind() != ValueKind::Bool) raise(ErrorCode::TypeError, "boolean expected");
        return v.as_bool() ? 1 : 0;
      };
      int a = tri(l), b = tri(r);
      if (e.op == BinOp::And) {
        if (a == 0 || b == 0) return Value::boolean(false);
        if (a == 1 && b == 1) return Value::boolean(true);
        return Value::null();
      }
      if (a == 1 || b == 1) return Value::boolean(true);
      if (a == 0 && b == 0) return Value::boolean(false);
      return Value::null();
    }
    Value l = eval_expr(*e.lhs, scope);
    Value r = eval_expr(*e.rhs, scope);
    switch (e.op) {
      case BinOp::Add: return l.add(r);
      case BinOp::Sub: return l.sub(r);
      case BinOp::Mul: return l.mul(r);
      case BinOp::Div: return l.div(r);
      default: break;
    }
    auto c = l.compare(r);
    if (!c) return Value::null();
    switch (e.op) {
      case BinOp::Eq: return Value::boolean(*c == 0);
      case BinOp::Ne: return Value::boolean(*c != 0);
      case BinOp::Lt: return Value::boolean(*c < 0);
      case BinOp::Le: return Value::boolean(*c <= 0);
      case BinOp::Gt: return Value::boolean(*c > 0);
      case BinOp::Ge: return Value::boolean(*c >= 0);
      default: break;
    }
    raise(ErrorCode::SemanticError, "unreachable operator");
  }

  static Timestamp as_ts(const Value& v) {
    if (v.kind() == ValueKind::Timestamp) return v.as_timestamp();
    if (v.kind() == ValueKind::Text) {
      auto t = Timestamp::parse(v.as_text());
      if (t) return *t;
    }
    raise(ErrorCode::TypeError, "timestamp expected, got " + v.render());
  }

  static int64_t unit_secs_of(const std::string& word) {
    auto u = parse_interval_unit(word);
    if (!u) raise(ErrorCode::TypeError, "unknown time unit '" + word + "'");
    return interval_unit_seconds(*u);
  }

  static Timestamp truncate_ts(Timestamp t, int64_t unit_secs) {
    t.secs = floor_div(t.secs, unit_secs) * unit_secs;
    return t;
  }

  Value eval_func(const Expr& e, const Scope* scope) {
    const std::string& f = e.name;
    auto arg = [&](size_t i) { return eval_expr(*e.args[i], scope); };
    if (f == "now" || f == "current_timestamp") return Value::timestamp(opt_.now);
    if (f == "dateadd") {
      if (e.args.size() != 3) raise(ErrorCode::TypeError, "dateadd(n, 'unit', ts)");
      Value n = arg(0), unit = arg(1), ts = arg(2);
      if (n.is_null() || ts.is_null()) return Value::null();
      int64_t secs = unit_secs_of(unit.as_text()) * n.as_int();
      Timestamp t = as_ts(ts);
      t.secs += secs;
      return Value::timestamp(t);
    }
    if (f == "date_trunc") {
      if (e.args.size() != 2) raise(ErrorCode::TypeError, "date_trunc(unit, ts)");
      Value unit = arg(0), ts = arg(1);
      if (ts.is_null()) return Value::null();
      return Value::timestamp(truncate_ts(as_ts(ts), unit_secs_of(unit.as_text())));
    }
    if (f == "floor") {
      if (e.args.size() == 2) {  // FLOOR(ts TO HOUR)
        Value ts = arg(0), unit = arg(1);
        if (ts.is_null()) return Value::null();
        return Value::timestamp(truncate_ts(as_ts(ts), unit_secs_of(unit.as_text())));
      }
      Value v = arg(0);
      if (v.is_null()) return Value::null();
      if (v.kind() == ValueKind::Int) return v;
      if (v.kind() == ValueKind::Decimal) {
        const Decimal& d = v.as_decimal();
        int64_t p = 1;
        for (int32_t i = 0; i < d.scale; ++i) p *= 10;
        return Value::integer(floor_div(d.coeff, p));
      }
      raise(ErrorCode::TypeError, "floor over non-numeric");
    }
    if (f == "start_time") {
      // start_time(gid, advance): range start for a range identifier.
      Value gid = arg(0), adv = arg(1);
      if (gid.is_null()) return Value::null();
      Timestamp t = eng_.epoch();
      t.secs += gid.as_int() * adv.as_interval().secs;
      return Value::timestamp(t);
    }
    if (f == "end_time") {
      // end_time(gid, advance, range): inclusive range end, one granule in.
      Value gid = arg(0), adv = arg(1), range = arg(2);
      if (gid.is_null()) return Value::null();
      Timestamp t = eng_.epoch();
      t.secs += gid.as_int() * adv.as_interval().secs + range.as_interval().secs - 1;
      return Value::timestamp(t);
    }
    raise(ErrorCode::UnresolvedName, "unknown function " + f);
  }

  Value eval_aggregate(const Expr& e, const Scope* scope) {
    // Find nearest scope carrying group rows.
    const Scope* s = scope;
    while (s && !s->group) s = s->outer;
    if (!s) raise(ErrorCode::SemanticError, "aggregate outside grouped query");
    const std::vector<const Row*>& rows = *s->group;

    if (e.agg == AggKind::CountStar) return Value::integer(static_cast<int64_t>(rows.size()));

    Value acc;  // null
    int64_t count = 0;
    for (const Row* wide : rows) {
      // Rebind the group frame to this row for the argument evaluation.
      Scope inner;
      inner.frames.push_back({s->group_rel, wide});
      inner.outer = s;
      Value v = eval_expr(*e.args[0], &inner);
      if (v.is_null()) continue;
      ++count;
      switch (e.agg) {
        case AggKind::Count: break;
        case AggKind::Sum:
        case AggKind::Avg: acc = acc.is_null() ? v : acc.add(v); break;
        case AggKind::Min:
          if (acc.is_null() || *v.compare(acc) < 0) acc = v;
          break;
        case AggKind::Max:
          if (acc.is_null() || *v.compare(acc) > 0) acc = v;
          break;
        default: break;
      }
    }
    if (e.agg == AggKind::Count) return Value::integer(count);
    if (e.agg == AggKind::Avg) {
      if (count == 0) return Value::null();
      return acc.div(Value::integer(count));
    }
    return acc;
  }

  // -- FROM items -------------------------------------------------------------

  Rel table_scan(const TableState& t, const std::string& alias) {
    Rel rel;
    for (const auto& col : t.schema)
      rel.cols.push_back({col.name, alias.empty() ? t.name : alias, false, col.type});
    rel.insert_only_source = t.insert_only;
    for (const RowVersion& v : t.versions)
      if (v.visible(opt_.stamp, opt_.include_pending)) rel.rows.push_back(v.payload);
    return rel;
  }

  Rel from_item(const FromItem& f, const Scope* scope) {
    Rel rel;
    switch (f.kind) {
      case FromItem::Kind::Table: {
        std::string key = to_upper(f.table);
        auto it = cte_ast_.find(key);
        if (it != cte_ast_.end()) {
          Rel r = cte_rel(key);
          // Requalify columns under the CTE (or alias) name.
          for (auto& c : r.cols) c.qualifier = f.alias.empty() ? f.table : f.alias;
          rel = std::move(r);
        } else {
          const TableState* t = eng_.find_table(f.table);
          if (!t) raise(ErrorCode::UnknownTable, "unknown table " + f.table);
          rel = table_scan(*t, f.alias);
        }
        break;
      }
      case FromItem::Kind::Subquery: {
        rel = query(*f.subquery, scope, false);
        for (auto& c : rel.cols)
          if (!f.alias.empty()) c.qualifier = f.alias;
        break;
      }
      case FromItem::Kind::Changes: rel = changes_rel(f, scope); break;
      case FromItem::Kind::TableFunc: rel = table_func(f, scope); break;
      case FromItem::Kind::Group: {
        // Left-correlated comma join of the children.
        rel = lateral_join(f.children, scope);
        break;
      }
    }
    if (f.window) rel = apply_window(rel, *f.window, scope);
    return rel;
  }

  Rel lateral_join(const std::vector<FromItem>& items, const Scope* outer) {
    Rel wide;
    wide.insert_only_source = true;
    wide.rows.push_back({});  // one empty partial row
    for (const FromItem& item : items) {
      bool correlated = item.kind == FromItem::Kind::TableFunc;
      Rel fixed;
      if (!correlated) {
        fixed = from_item(item, outer);
        wide.insert_only_source = wide.insert_only_source && fixed.insert_only_source;
        if (!wide.finalize_pred) wide.finalize_pred = fixed.finalize_pred;
      }
      Rel next;
      bool cols_done = false;
      std::vector<Row> next_rows;
      for (const Row& partial : wide.rows) {
        const Rel* piece = &fixed;
        Rel corr;
        if (correlated) {
          Scope s;
          s.frames.push_back({&wide, &partial});
          s.outer = outer;
          corr = from_item(item, &s);
          piece = &corr;
        }
        if (!cols_done) {
          next.cols = wide.cols;
          for (const auto& c : piece->cols) next.cols.push_back(c);
          cols_done = true;
        }
        for (const Row& r : piece->rows) {
          Row combined = partial;
          combined.insert(combined.end(), r.begin(), r.end());
          next_rows.push_back(std::move(combined));
        }
      }
      if (!cols_done) {
        next.cols = wide.cols;
        if (!correlated)
          for (const auto& c : fixed.cols) next.cols.push_back(c);
      }
      next.finalize_pred = wide.finalize_pred;
      next.insert_only_source = wide.insert_only_source;
      next.rows = std::move(next_rows);
      wide = std::move(next);
    }
    return wide;
  }

  Rel table_func(const FromItem& f, const Scope* scope) {
    std::string fn;
    for (char c : f.func_name) fn.push_back(static_cast<char>(std::tolower((unsigned char)c)));
    if (fn == "range_identifiers") {
      // range_identifiers(value, range, advance) -> ids of containing ranges,
      // anchored at the engine epoch.
      if (f.func_args.size() != 3)
        raise(ErrorCode::TypeError, "range_identifiers(value, range, advance)");
      Scope local;
      const Scope* s = scope;
      Value v = Evaluator::eval_expr(*f.func_args[0], s);
      Value range = eval_expr(*f.func_args[1], s);
      Value adv = eval_expr(*f.func_args[2], s);
      Rel rel;
      rel.cols.push_back({"COLUMN_VALUE", f.alias, false, ColumnType::Int});
      (void)local;
      if (!v.is_null()) {
        int64_t vs = as_ts(v).secs - eng_.epoch().secs;
        int64_t r = range.as_interval().secs, a = adv.as_interval().secs;
        if (r <= 0 || a <= 0) raise(ErrorCode::TypeError, "range and advance must be positive");
        if (vs >= 0) {
          int64_t hi = floor_div(vs, a);
          int64_t lo = std::max<int64_t>(0, floor_div(vs - r, a) + 1);
          for (int64_t i = lo; i <= hi; ++i) rel.rows.push_back({Value::integer(i)});
        }
      }
      return rel;
    }
    raise(ErrorCode::UnresolvedName, "unknown table function " + f.func_name);
  }

  // -- window subquery ----------------------------------------------------------

  struct Axis {
    bool time_axis = true;
    int64_t start = 0;  // seconds or integer units
    TsStyle style = TsStyle::Iso;
    int64_t range = 0, advance = 0, granule = 1;
  };

  Axis window_axis(const Rel& rel, const WindowClause& w, int col_idx, const Scope* scope) {
    Axis ax;
    std::optional<ColumnType> ct = rel.cols[col_idx].type;
    ax.time_axis = !(ct && (*ct == ColumnType::Int || *ct == ColumnType::Number));
    if (ax.time_axis) {
      ax.granule = ct && *ct == ColumnType::Date ? 86400 : 1;
      Timestamp s0 = eng_.epoch();
      if (w.start) s0 = as_ts(eval_expr(*w.start, scope));
      ax.start = s0.secs;
      ax.style = s0.style;
      ax.range = eval_expr(*w.range, scope).as_interval().secs;
      ax.advance = w.advance ? eval_expr(*w.advance, scope).as_interval().secs : ax.range;
    } else {
      ax.granule = 1;
      ax.start = w.start ? eval_expr(*w.start, scope).as_int() : 0;
      auto as_units = [&](const ExprPtr& e) {
        Value v = eval_expr(*e, scope);
        return v.kind() == ValueKind::Interval ? v.as_interval().secs : v.as_int();
      };
      ax.range = as_units(w.range);
      ax.advance = w.advance ? as_units(w.advance) : ax.range;
    }
    if (ax.range <= 0 || ax.advance <= 0)
      raise(ErrorCode::TypeError, "window range and advance must be positive");
    return ax;
  }

  Value axis_value(const Axis& ax, int64_t units) {
    if (ax.time_axis) {
      Timestamp t;
      t.secs = units;
      t.style = ax.style;
      return Value::timestamp(t);
    }
    return Value::integer(units);
  }

  int64_t axis_units(const Axis& ax, const Value& v) {
    return ax.time_axis ? as_ts(v).secs : v.as_int();
  }

  Rel apply_window(const Rel& input, const WindowClause& w, const Scope* scope) {
    WindowClause clause = w;
    int col_idx;
    if (clause.hopping_sugar) {
      // Shorthand form names no column: use the unique date/timestamp column.
      col_idx = -1;
      for (size_t i = 0; i < input.cols.size(); ++i) {
        if (input.cols[i].type &&
            (*input.cols[i].type == ColumnType::Date ||
             *input.cols[i].type == ColumnType::Timestamp)) {
          if (col_idx >= 0)
            raise(ErrorCode::SemanticError,
                  "HOPPING window needs a unique time column; qualify with WINDOW (col ...)");
          col_idx = static_cast<int>(i);
        }
      }
      if (col_idx < 0)
        raise(ErrorCode::SemanticError, "HOPPING window found no time column in the relation");
    } else {
      col_idx = input.find_col(clause.column->name);
      if (col_idx < 0)
        raise(ErrorCode::UnresolvedName, "unknown windowing column " + clause.column->name);
    }
    Axis ax = window_axis(input, clause, col_idx, scope);

    Rel out;
    out.cols = input.cols;
    std::optional<ColumnType> bound_type = input.cols[col_idx].type;
    out.cols.push_back({clause.start_bound, "", false, bound_type});
    out.cols.push_back({clause.end_bound, "", false, bound_type});
    out.finalize_pred = input.finalize_pred;
    out.insert_only_source = input.insert_only_source;
    for (const Row& row : input.rows) {
      const Value& v = row[col_idx];
      if (v.is_null()) continue;
      int64_t units = axis_units(ax, v) - ax.start;
      if (units < 0) continue;  // before start: those ranges are closed
      int64_t hi = floor_div(units, ax.advance);
      int64_t lo = std::max<int64_t>(0, floor_div(units - ax.range, ax.advance) + 1);
      for (int64_t i = lo; i <= hi; ++i) {
        Row extended = row;
        int64_t ws = ax.start + i * ax.advance;
        extended.push_back(axis_value(ax, ws));
        extended.push_back(axis_value(ax, ws + ax.range - ax.granule));
        out.rows.push_back(std::move(extended));
      }
    }
    return out;
  }

  // -- CHANGES ------------------------------------------------------------------

  struct Span {
    int64_t from_stamp = 0;
    int64_t to_stamp = 0;
    std::optional<Timestamp> from_time;
    std::optional<Timestamp> to_time;
  };

  int64_t stamp_at_time(Timestamp t) const {
    const auto& times = eng_.commit_times();
    int64_t best = 0;
    for (size_t s = 1; s < times.size(); ++s)
      if (times[s].secs <= t.secs) best = static_cast<int64_t>(s);
    return best;
  }

  Span resolve_span(const FromItem& f, const Scope* scope) {
    Span span;
    span.to_stamp = opt_.stamp;
    if (f.changes_from) {
      if (f.changes_from->kind == Expr::Kind::LastScheduleTime) {
        if (!opt_.resume_stamp)
          raise(ErrorCode::SemanticError,
                "LAST_SCHEDULE_TIME is only meaningful inside a continuous task");
        span.from_stamp = *opt_.resume_stamp;
      } else {
        span.from_time = as_ts(eval_expr(*f.changes_from, scope));
      }
    } else if (opt_.resume_stamp) {
      span.from_stamp = *opt_.resume_stamp;
    }
    if (f.changes_to) {
      span.to_time = as_ts(eval_expr(*f.changes_to, scope));
      if (span.from_time && span.from_time->secs > span.to_time->secs)
        raise(ErrorCode::InvalidRange, "CHANGES range is inverted");
    }
    return span;
  }

  static void append_record_cols(Rel& rel, const std::string& alias) {
    rel.cols.push_back({"Action", alias, false, ColumnType::Text});
    rel.cols.push_back({"RowID", alias, false, ColumnType::Text});
    rel.cols.push_back({"Time", alias, false, ColumnType::Timestamp});
    rel.cols.push_back({"CommitSeq", alias, true, ColumnType::Int});
  }

  static Row record_row(const ChangeRecord& r) {
    Row row = r.payload;
    row.push_back(Value::text(change_action_name(r.action)));
    row.push_back(Value::text(r.row_id));
    row.push_back(Value::timestamp(r.time));
    row.push_back(Value::integer(r.commit_seq));
    return row;
  }

  Rel changes_rel(const FromItem& f, const Scope* scope) {
    Span span = resolve_span(f, scope);
    std::string format = f.changes_format.empty() ? "DELTA" : f.changes_format;

    // Base table (and not a CTE reference)?
    if (!f.subquery && !cte_ast_.count(to_upper(f.changes_table))) {
      const TableState* t = eng_.find_table(f.changes_table);
      if (!t) raise(ErrorCode::UnknownTable, "unknown table " + f.changes_table);
      ChangeSpan cs{span.from_stamp, span.to_stamp, span.from_time, span.to_time};
      std::vector<ChangeRecord> recs =
          format == "LOG" ? base_table_log(*t, cs) : base_table_delta(*t, cs);
      Rel rel;
      for (const auto& col : t->schema)
        rel.cols.push_back({col.name, f.alias.empty() ? t->name : f.alias, false, col.type});
      append_record_cols(rel, f.alias.empty() ? t->name : f.alias);
      rel.insert_only_source = true;  // a change log only grows
      for (const auto& r : recs) rel.rows.push_back(record_row(r));
      return rel;
    }

    QueryPtr sub = f.subquery;
    if (!sub) sub = cte_ast_.at(to_upper(f.changes_table));
    return derived_changes(*sub, span, format, f.alias, scope);
  }

  // Snapshot-pair diff of a derived relation. Identity is the grouping key
  // for grouped queries, the whole row otherwise.
  Rel derived_changes(const QueryExpr& sub, const Span& span, const std::string& format,
                      const std::string& alias, const Scope* scope) {
    int64_t from_stamp = span.from_stamp;
    if (span.from_time) from_stamp = std::max(from_stamp, stamp_at_time(*span.from_time));
    int64_t to_stamp = span.to_stamp;
    if (span.to_time) to_stamp = std::min(to_stamp, stamp_at_time(*span.to_time));
    if (from_stamp > to_stamp) raise(ErrorCode::InvalidRange, "CHANGES range is inverted");

    std::vector<int> group_key_idx;
    Rel shape = eval_sub_at(sub, to_stamp, &group_key_idx);

    Rel rel;
    rel.cols = shape.cols;
    append_record_cols(rel, alias);
    rel.insert_only_source = true;

    auto diff_into = [&](int64_t s1, int64_t s2, Timestamp rec_time) {
      Rel before = eval_sub_at(sub, s1, nullptr);
      Rel after = s2 == to_stamp ? shape : eval_sub_at(sub, s2, nullptr);
      emit_derived_diff(rel, before, after, group_key_idx, rec_time, s2);
    };

    if (format == "LOG") {
      std::vector<std::string> deps = query_base_tables_of(sub);
      for (int64_t c = from_stamp + 1; c <= to_stamp; ++c) {
        if (!commit_touches(c, deps)) continue;
        diff_into(c - 1, c, eng_.commit_times()[c]);
      }
    } else {
      Timestamp rec_time = opt_.now;
      std::vector<std::string> deps = query_base_tables_of(sub);
      for (int64_t c = to_stamp; c > from_stamp; --c) {
        if (commit_touches(c, deps)) {
          rec_time = eng_.commit_times()[c];
          break;
        }
      }
      diff_into(from_stamp, to_stamp, rec_time);
    }
    return rel;
  }

  bool commit_touches(int64_t stamp, const std::vector<std::string>& deps) const;

  std::vector<std::string> query_base_tables_of(const QueryExpr& q) {
    return query_base_tables(q);
  }

  Rel eval_sub_at(const QueryExpr& sub, int64_t stamp, std::vector<int>* group_key_idx) {
    EvalOptions o = opt_;
    o.stamp = stamp;
    o.include_pending = false;
    o.cursor = nullptr;
    Evaluator ev(eng_, o);
    ev.cte_ast_ = cte_ast_;
    if (group_key_idx) *group_key_idx = group_output_cols(sub);
    return ev.query(sub, nullptr, false);
  }

  // Output column indexes holding the grouping key of a grouped query; empty
  // when the query is not grouped (identity is then the whole row).
  static std::vector<int> group_output_cols(const QueryExpr& q) {
    std::vector<int> out;
    if (q.kind != QueryExpr::Kind::Spec || !q.spec || q.spec->group_by.empty()) return out;
    const QuerySpec& s = *q.spec;
    auto resolved = [&](const ExprPtr& e) -> ExprPtr {
      if (e->kind == Expr::Kind::ColumnRef && e->qualifier.empty()) {
        for (const auto& item : s.items)
          if (!item.star && !item.alias.empty() && ident_eq(item.alias, e->name)) return item.expr;
      }
      return e;
    };
    for (size_t i = 0; i < s.items.size(); ++i) {
      if (s.items[i].star) continue;
      std::string rendered = render_expr(*resolved(s.items[i].expr));
      for (const auto& g : s.group_by) {
        if (render_expr(*resolved(g)) == rendered) {
          out.push_back(static_cast<int>(i));
          break;
        }
      }
    }
    return out;
  }

  void emit_derived_diff(Rel& out, const Rel& before, const Rel& after,
                         const std::vector<int>& group_key_idx, Timestamp rec_time,
                         int64_t commit) {
    struct Entry {
      Row key;
      uint64_t id;
      std::vector<const Row*> before_rows, after_rows;
    };
    auto key_of = [&](const Row& r) {
      Row key;
      if (!group_key_idx.empty()) {
        for (int i : group_key_idx) key.push_back(r[i]);
      } else {
        key = r;
      }
      return key;
    };
    std::map<std::vector<std::string>, Entry> entries;  // rendered key -> entry
    auto slot = [&](const Row& r) -> Entry& {
      Row key = key_of(r);
      std::vector<std::string> rk;
      for (const auto& v : key) rk.push_back(v.render() + "\x1f" + value_kind_name(v.kind()));
      auto it = entries.find(rk);
      if (it == entries.end()) {
        Entry e;
        e.key = key;
        e.id = hash_row(key);
        it = entries.emplace(std::move(rk), std::move(e)).first;
      }
      return it->second;
    };
    for (const Row& r : before.rows) slot(r).before_rows.push_back(&r);
    for (const Row& r : after.rows) slot(r).after_rows.push_back(&r);

    // Sorted by key tuple for deterministic output; DELETE precedes INSERT
    // within one identity.
    std::vector<const Entry*> ordered;
    for (auto& [_, e] : entries) ordered.push_back(&e);
    std::sort(ordered.begin(), ordered.end(),
              [](const Entry* a, const Entry* b) { return compare_rows(a->key, b->key) < 0; });

    for (const Entry* e : ordered) {
      if (!group_key_idx.empty()) {
        // One logical row per group key.
        const Row* b = e->before_rows.empty() ? nullptr : e->before_rows.front();
        const Row* a = e->after_rows.empty() ? nullptr : e->after_rows.front();
        if (b && a && compare_rows(*b, *a) == 0) continue;
        if (b) push_record(out, *b, ChangeAction::Delete, e->id, rec_time, commit);
        if (a) push_record(out, *a, ChangeAction::Insert, e->id, rec_time, commit);
      } else {
        // Bag semantics: diff by multiplicity.
        int64_t nb = static_cast<int64_t>(e->before_rows.size());
        int64_t na = static_cast<int64_t>(e->after_rows.size());
        for (int64_t k = 0; k < nb - na; ++k)
          push_record(out, *e->before_rows.front(), ChangeAction::Delete, e->id, rec_time, commit);
        for (int64_t k = 0; k < na - nb; ++k)
          push_record(out, *e->after_rows.front(), ChangeAction::Insert, e->id, rec_time, commit);
      }
    }
  }

  void push_record(Rel& out, const Row& payload, ChangeAction action, uint64_t id,
                   Timestamp rec_time, int64_t commit) {
    Row row = payload;
    row.push_back(Value::text(change_action_name(action)));
    row.push_back(Value::text(format_synthetic_row_id(id)));
    row.push_back(Value::timestamp(rec_time));
    row.push_back(Value::integer(commit));
    out.rows.push_back(std::move(row));
  }

  // -- query specification -----------------------------------------------------

  Rel spec(const QuerySpec& s, const Scope* outer, const Rel* from_override = nullptr) {
    Rel wide = from_override ? *from_override : lateral_join(s.from, outer);
    if (s.from.empty()) wide.rows.assign(1, Row{});  // SELECT without FROM

    expired_read_guard(s, outer);

    // WHERE
    if (s.where) {
      std::vector<Row> kept;
      for (const Row& r : wide.rows) {
        Scope sc;
        sc.frames.push_back({&wide, &r});
        sc.outer = outer;
        if (is_true(eval_expr(*s.where, &sc))) kept.push_back(r);
      }
      wide.rows = std::move(kept);
    }

    // FINALIZE WHERE (finalization on read): monotone filter over the rows.
    if (s.finalize) {
      check_read_finalize_monotone(s);
      std::vector<Row> kept;
      for (const Row& r : wide.rows) {
        Scope sc;
        sc.frames.push_back({&wide, &r});
        sc.outer = outer;
        if (is_true(eval_expr(*s.finalize, &sc))) kept.push_back(r);
      }
      wide.rows = std::move(kept);
    }

    bool has_aggregates = false;
    for (const auto& item : s.items)
      if (!item.star && expr_has_aggregate(*item.expr)) has_aggregates = true;

    Rel out;
    if (!s.group_by.empty() || has_aggregates) {
      out = grouped_projection(s, wide, outer);
    } else {
      out = plain_projection(s, wide, outer);
    }
    out.finalize_pred = s.finalize ? s.finalize : wide.finalize_pred;
    out.insert_only_source = wide.insert_only_source;
    if (s.finalize && !out.finalize_pred) out.finalize_pred = s.finalize;

    // ORDER BY / LIMIT
    if (!s.order_by.empty()) {
      std::vector<std::pair<Row, Row>> keyed;  // (sort key, row)
      for (const Row& r : out.rows) {
        Scope sc;
        sc.frames.push_back({&out, &r});
        sc.outer = outer;
        Row key;
        for (const auto& k : s.order_by) key.push_back(eval_expr(*resolve_alias(k.expr, s), &sc));
        keyed.emplace_back(std::move(key), r);
      }
      std::stable_sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
        for (size_t i = 0; i < s.order_by.size(); ++i) {
          int c = a.first[i].total_order(b.first[i]);
          if (c != 0) return s.order_by[i].desc ? c > 0 : c < 0;
        }
        return false;
      });
      out.rows.clear();
      for (auto& [_, r] : keyed) out.rows.push_back(std::move(r));
    }
    if (s.limit && static_cast<int64_t>(out.rows.size()) > *s.limit) out.rows.resize(*s.limit);
    return out;
  }

  static bool expr_has_aggregate(const Expr& e) {
    if (e.kind == Expr::Kind::Aggregate) return true;
    for (const auto& child : {e.lhs, e.rhs})
      if (child && expr_has_aggregate(*child)) return true;
    for (const auto& a : e.args)
      if (a && expr_has_aggregate(*a)) return true;
    return false;
  }

  // GROUP BY minute resolves against a select alias when one matches.
  ExprPtr resolve_alias(const ExprPtr& e, const QuerySpec& s) {
    if (e->kind == Expr::Kind::ColumnRef && e->qualifier.empty()) {
      for (const auto& item : s.items)
        if (!item.star && !item.alias.empty() && ident_eq(item.alias, e->name)) return item.expr;
    }
    return e;
  }

  std::string item_name(const SelectItem& item) {
    if (!item.alias.empty()) return item.alias;
    if (item.expr->kind == Expr::Kind::ColumnRef) return item.expr->name;
    return render_expr(*item.expr);
  }

  Rel plain_projection(const QuerySpec& s, const Rel& wide, const Scope* outer) {
    Rel out;
    struct Source {
      bool star = false;
      int col = -1;
      ExprPtr expr;
    };
    std::vector<Source> sources;
    for (const auto& item : s.items) {
      if (item.star) {
        for (size_t i = 0; i < wide.cols.size(); ++i) {
          if (wide.cols[i].hidden) continue;
          if (!item.star_qualifier.empty() &&
              !ident_eq(wide.cols[i].qualifier, item.star_qualifier))
            continue;
          out.cols.push_back(
              {wide.cols[i].name, "", false, wide.cols[i].type});
          sources.push_back({true, static_cast<int>(i), nullptr});
        }
      } else {
        std::optional<ColumnType> type;
        if (item.expr->kind == Expr::Kind::ColumnRef) {
          ResolvedCol rc = resolve_column_in(wide, item.expr->qualifier, item.expr->name);
          if (rc.index >= 0) type = wide.cols[rc.index].type;
        }
        out.cols.push_back({item_name(item), "", false, type});
        sources.push_back({false, -1, item.expr});
      }
    }
    for (const Row& r : wide.rows) {
      Scope sc;
      sc.frames.push_back({&wide, &r});
      sc.outer = outer;
      Row prow;
      for (const auto& src : sources)
        prow.push_back(src.star ? r[src.col] : eval_expr(*src.expr, &sc));
      out.rows.push_back(std::move(prow));
    }
    return out;
  }

  static ResolvedCol resolve_column_in(const Rel& rel, const std::string& qualifier,
                                       const std::string& name) {
    for (size_t i = 0; i < rel.cols.size(); ++i) {
      if (!ident_eq(rel.cols[i].name, name)) continue;
      if (!qualifier.empty() && !ident_eq(rel.cols[i].qualifier, qualifier)) continue;
      ResolvedCol rc;
      rc.index = static_cast<int>(i);
      return rc;
    }
    return {};
  }

  Rel grouped_projection(const QuerySpec& s, const Rel& wide, const Scope* outer) {
    // Evaluate group keys per row.
    std::vector<ExprPtr> keys;
    for (const auto& g : s.group_by) keys.push_back(resolve_alias(g, s));

    struct Group {
      Row key;
      std::vector<const Row*> rows;
    };
    std::vector<Group> groups;
    for (const Row& r : wide.rows) {
      Scope sc;
      sc.frames.push_back({&wide, &r});
      sc.outer = outer;
      Row key;
      for (const auto& k : keys) key.push_back(eval_expr(*k, &sc));
      Group* g = nullptr;
      for (auto& existing : groups)
        if (compare_rows(existing.key, key) == 0) {
          g = &existing;
          break;
        }
      if (!g) {
        groups.push_back({std::move(key), {}});
        g = &groups.back();
      }
      g->rows.push_back(&r);
    }
    // No GROUP BY but aggregates: one group over everything (even empty).
    if (keys.empty() && groups.empty()) groups.push_back({{}, {}});

    std::sort(groups.begin(), groups.end(),
              [](const Group& a, const Group& b) { return compare_rows(a.key, b.key) < 0; });

    Rel out;
    std::vector<ExprPtr> exprs;
    for (const auto& item : s.items) {
      if (item.star)
        raise(ErrorCode::SemanticError, "SELECT * cannot be combined with GROUP BY");
      std::optional<ColumnType> type;
      if (item.expr->kind == Expr::Kind::ColumnRef) {
        ResolvedCol rc = resolve_column_in(wide, item.expr->qualifier, item.expr->name);
        if (rc.index >= 0) type = wide.cols[rc.index].type;
      }
      out.cols.push_back({item_name(item), "", false, type});
      exprs.push_back(item.expr);
    }

    const Row empty_row;
    for (const Group& g : groups) {
      const Row* rep = g.rows.empty() ? &empty_row : g.rows.front();
      Scope sc;
      sc.frames.push_back({&wide, rep});
      sc.outer = outer;
      sc.group = &g.rows;
      sc.group_rel = &wide;
      Row prow;
      bool null_rep = g.rows.empty();
      for (const auto& e : exprs) {
        if (null_rep && !expr_has_aggregate(*e)) {
          prow.push_back(Value::null());
        } else {
          prow.push_back(eval_expr(*e, &sc));
        }
      }
      out.rows.push_back(std::move(prow));
    }
    return out;
  }

  // -- expired read guard ---------------------------------------------------

  void expired_read_guard(const QuerySpec& s, const Scope* outer) {
    if (opt_.expired_guard != ExpiredGuardMode::Error) return;
    std::function<void(const FromItem&)> visit = [&](const FromItem& f) {
      if (f.kind == FromItem::Kind::Group) {
        for (const auto& c : f.children) visit(c);
        return;
      }
      if (f.kind != FromItem::Kind::Table) return;
      if (cte_ast_.count(to_upper(f.table))) return;
      const TableState* t = eng_.find_table(f.table);
      if (!t) return;
      // Any expired row the filter could select?
      for (const RowVersion& v : t->versions) {
        if (!v.expired) continue;
        if (where_may_select(s.where, *t, v.payload)) {
          raise(ErrorCode::ExpiredDataError,
                "query touches expired rows of " + t->name +
                    (t->expire_predicate ? " (policy: " + render_expr(*t->expire_predicate) + ")"
                                         : ""));
        }
      }
      // Any purged region the filter could overlap?
      for (const PurgeHorizon& h : t->purge_horizons) {
        if (predicates_may_overlap(eng_, *t, s.where.get(), opt_.now, *h.predicate, h.pass_time,
                                   opt_.stamp)) {
          raise(ErrorCode::ExpiredDataError,
                "query may touch purged rows of " + t->name +
                    " (policy at purge: " + render_expr(*h.predicate) + ")");
        }
      }
    };
    for (const auto& f : s.from) visit(f);
    (void)outer;
  }

  // Conservative: atoms that involve other tables or fail to evaluate count
  // as satisfied.
  bool where_may_select(const ExprPtr& where, const TableState& t, const Row& payload) {
    if (!where) return true;
    try {
      Value v = eval_expr_on_table_row(eng_, *where, t, payload, opt_.stamp, opt_.now);
      return v.is_null() || (v.kind() == ValueKind::Bool && v.as_bool());
    } catch (const EngineError&) {
      return true;
    }
  }

  void check_read_finalize_monotone(const QuerySpec& s) {
    if (s.from.size() == 1 && s.from[0].kind == FromItem::Kind::Table &&
        !cte_ast_.count(to_upper(s.from[0].table))) {
      const TableState* t = eng_.find_table(s.from[0].table);
      if (t) {
        std::string why;
        if (check_monotone_predicate(eng_, *s.finalize, *t, &why) != Monotonicity::Monotone)
          raise(ErrorCode::NonMonotonePredicate, "FINALIZE predicate is not monotone: " + why);
      }
    }
  }

  // -- FINAL ------------------------------------------------------------------

  Rel eval_final(const QueryExpr& body, const Scope* outer, Cursor* cursor);
  Rel eval_grouped_final(const QueryExpr& q, const Scope* outer, Cursor* cursor);
  Rel eval_row_final(const QuerySpec& s, const Scope* outer, Cursor* cursor);
  Rel dedup_against_cursor(const Rel& rel, Cursor* cursor);

  Rel cte_rel(const std::string& key) {
    auto it = cte_cache_.find(key);
    if (it != cte_cache_.end()) return it->second;
    Rel r = query(*cte_ast_.at(key), nullptr, false);
    cte_cache_[key] = r;
    return r;
  }

  const Engine& eng_;
  EvalOptions opt_;
  std::map<std::string, QueryPtr> cte_ast_;
  std::map<std::string, Rel> cte_cache_;
};

bool Evaluator::commit_touches(int64_t stamp, const std::vector<std::string>& deps) const {
  const auto& touched = eng_.commit_touched();
  if (stamp <= 0 || stamp >= static_cast<int64_t>(touched.size())) return false;
  for (const std::string& d : deps)
    if (touched[stamp].count(to_upper(d))) return true;
  return false;
}

// ---------------------------------------------------------------------------
// FINAL evaluation

namespace {

struct WindowFinalShape {
  const QuerySpec* grouped_spec = nullptr;
  const QuerySpec* outer_spec = nullptr;  // set when wrapped in CHANGES
  const FromItem* windowed_item = nullptr;
};

// Recognizes FINAL over a windowed query, optionally wrapped in CHANGES.
bool classify_window_final(const QueryExpr& body, WindowFinalShape& shape) {
  if (body.kind != QueryExpr::Kind::Spec) return false;
  const QuerySpec& s = *body.spec;
  if (s.from.size() != 1) return false;
  const FromItem& f = s.from[0];
  if (f.window) {
    shape.grouped_spec = &s;
    shape.windowed_item = &f;
    return true;
  }
  if (f.kind == FromItem::Kind::Changes && f.subquery &&
      f.subquery->kind == QueryExpr::Kind::Spec) {
    const QuerySpec& inner = *f.subquery->spec;
    if (inner.from.size() == 1 && inner.from[0].window) {
      shape.grouped_spec = &inner;
      shape.outer_spec = &s;
      shape.windowed_item = &inner.from[0];
      return true;
    }
  }
  return false;
}

}  // namespace

Rel Evaluator::eval_final(const QueryExpr& body, const Scope* outer, Cursor* cursor) {
  EvalOptions saved = opt_;
  opt_.in_final = true;
  if (opt_.expired_guard == ExpiredGuardMode::Ignore) {
    // FINAL-qualified reads opt into expiration errors unless the session
    // explicitly chose IGNORE; the engine resolves that before calling us.
  }
  struct OptRestore {
    Evaluator* self;
    EvalOptions saved;
    ~OptRestore() { self->opt_ = saved; }
  } restore{this, saved};

  const QueryExpr* b = &body;
  while (b->kind == QueryExpr::Kind::Final) b = b->left.get();

  WindowFinalShape shape;
  if (classify_window_final(*b, shape)) {
    const FromItem& item = *shape.windowed_item;
    const WindowClause& w = *item.window;

    // Source rows (pre-window) determine the closure watermark.
    FromItem source = item;
    source.window = nullptr;
    Rel source_rel = from_item(source, outer);
    int col_idx;
    if (w.hopping_sugar) {
      col_idx = -1;
      for (size_t i = 0; i < source_rel.cols.size(); ++i)
        if (source_rel.cols[i].type && (*source_rel.cols[i].type == ColumnType::Date ||
                                        *source_rel.cols[i].type == ColumnType::Timestamp))
          col_idx = static_cast<int>(i);
    } else {
      col_idx = source_rel.find_col(w.column->name);
    }
    if (col_idx < 0) raise(ErrorCode::UnresolvedName, "unknown windowing column");
    Axis ax = window_axis(source_rel, w, col_idx, outer);

    // Effective grace: clause grace takes precedence, then the enabled
    // increasing constraint's grace, else the constraint is required.
    int64_t grace = 0;
    if (w.grace) {
      Value g = eval_expr(*w.grace, outer);
      grace = g.kind() == ValueKind::Interval ? g.as_interval().secs : g.as_int();
    } else {
      const TableState* t =
          item.kind == FromItem::Kind::Table ? eng_.find_table(item.table) : nullptr;
      if (!t || !t->increasing || !t->increasing->enabled ||
          !ident_eq(t->increasing->column, source_rel.cols[col_idx].name))
        raise(ErrorCode::NotFinalizable,
              "FINAL window needs a GRACE clause or an enabled INCREASING constraint on the "
              "windowing column");
      grace = t->increasing->grace_secs.value_or(0);
    }

    // Watermark: max committed windowing value.
    std::optional<int64_t> max_units;
    for (const Row& r : source_rel.rows) {
      if (r[col_idx].is_null()) continue;
      int64_t u = axis_units(ax, r[col_idx]);
      if (!max_units || u > *max_units) max_units = u;
    }

    auto closed = [&](int64_t i) {
      if (!max_units) return false;
      int64_t end_incl = ax.start + i * ax.advance + ax.range - ax.granule;
      return *max_units > end_incl + grace;
    };
    int64_t old_frontier = cursor ? cursor->window_frontier : 0;
    int64_t new_frontier = old_frontier;
    while (closed(new_frontier)) ++new_frontier;

    // Evaluate the windowed (grouped) query and keep rows of newly closed
    // ranges only.
    Rel grouped = spec(*shape.grouped_spec, outer);
    int sb = grouped.find_col(w.start_bound);
    if (sb < 0)
      raise(ErrorCode::NotFinalizable,
            "FINAL window queries must project the window start bound (" + w.start_bound + ")");
    Rel picked;
    picked.cols = grouped.cols;
    for (const Row& r : grouped.rows) {
      if (r[sb].is_null()) continue;
      int64_t i = floor_div(axis_units(ax, r[sb]) - ax.start, ax.advance);
      if (i >= old_frontier && i < new_frontier) picked.rows.push_back(r);
    }
    if (cursor) cursor->window_frontier = new_frontier;

    if (!shape.outer_spec) return picked;

    // Wrapped in CHANGES: closed windows surface as INSERT records, then the
    // outer projection applies.
    QueryExpr grouped_q;
    grouped_q.kind = QueryExpr::Kind::Spec;
    grouped_q.spec = std::make_shared<QuerySpec>(*shape.grouped_spec);
    std::vector<int> key_cols = group_output_cols(grouped_q);
    Rel records;
    records.cols = picked.cols;
    append_record_cols(records, "");
    for (const Row& r : picked.rows) {
      Row key;
      for (int i : key_cols) key.push_back(r[i]);
      if (key.empty()) key = r;
      Row row = r;
      row.push_back(Value::text("INSERT"));
      row.push_back(Value::text(format_synthetic_row_id(hash_row(key))));
      row.push_back(Value::timestamp(opt_.now));
      row.push_back(Value::integer(opt_.stamp));
      records.rows.push_back(std::move(row));
    }
    return plain_projection(*shape.outer_spec, records, outer);
  }

  // Grouped finalization: emit a group only when its whole granule is final.
  if (b->kind == QueryExpr::Kind::Spec && !b->spec->group_by.empty()) {
    return eval_grouped_final(*b, outer, cursor);
  }

  // Row-level finalization.
  if (b->kind == QueryExpr::Kind::Spec) {
    return eval_row_final(*b->spec, outer, cursor);
  }
  raise(ErrorCode::NotFinalizable, "FINAL cannot be applied to this query shape");
}

Rel Evaluator::dedup_against_cursor(const Rel& rel, Cursor* cursor) {
  if (!cursor) return rel;
  Rel out;
  out.cols = rel.cols;
  std::map<uint64_t, int64_t> seen_now;
  for (const Row& r : rel.rows) {
    uint64_t h = hash_row(r);
    int64_t idx = seen_now[h]++;
    auto it = cursor->emitted_rows.find(h);
    int64_t delivered = it == cursor->emitted_rows.end() ? 0 : it->second;
    if (idx >= delivered) {
      out.rows.push_back(r);
      cursor->emitted_rows[h] = idx + 1;
    }
  }
  return out;
}

Rel Evaluator::eval_grouped_final(const QueryExpr& q, const Scope* outer, Cursor* cursor) {
  const QuerySpec& s = *q.spec;
  Rel body = spec(s, outer);
  ExprPtr pred = body.finalize_pred;
  if (!pred)
    raise(ErrorCode::NotFinalizable,
          "FINAL over a grouped query requires a finalization predicate on its source");

  // Immutable-source gate: every base table feeding the group must be
  // insert-only, otherwise aggregates can still change.
  for (const std::string& name : query_base_tables(q)) {
    const TableState* t = eng_.find_table(name);
    if (t && !t->insert_only)
      raise(ErrorCode::NotFinalizable,
            "FINAL over a grouped query requires insert-only sources; " + t->name + " is not");
  }

  // Find the source table carrying the finalized time column.
  const TableState* src = nullptr;
  std::string time_col;
  for (const std::string& name : query_base_tables(q)) {
    const TableState* t = eng_.find_table(name);
    if (!t) continue;
    std::string c = first_time_column(*pred, *t);
    if (!c.empty()) {
      src = t;
      time_col = c;
      break;
    }
  }
  if (!src)
    raise(ErrorCode::NotFinalizable, "finalization predicate names no time column of a source");

  // Find the group key derived from that column and its output position.
  std::vector<int> key_cols = group_output_cols(q);
  int out_idx = -1;
  int64_t unit_secs = 1;
  for (size_t gi = 0; gi < s.group_by.size() && out_idx < 0; ++gi) {
    ExprPtr g = resolve_alias(s.group_by[gi], s);
    const Expr* col = nullptr;
    int64_t u = 1;
    if (g->kind == Expr::Kind::ColumnRef) {
      col = g.get();
    } else if (g->kind == Expr::Kind::FuncCall &&
               (g->name == "date_trunc" || g->name == "floor") && g->args.size() == 2) {
      const Expr* a0 = g->args[0].get();
      const Expr* a1 = g->args[1].get();
      const Expr* unit_arg = g->name == "date_trunc" ? a0 : a1;
      const Expr* col_arg = g->name == "date_trunc" ? a1 : a0;
      if (col_arg->kind == Expr::Kind::ColumnRef && unit_arg->kind == Expr::Kind::Literal) {
        col = col_arg;
        u = interval_unit_seconds(*parse_interval_unit(unit_arg->literal.as_text()));
      }
    }
    if (col && ident_eq(col->name, time_col)) {
      unit_secs = u;
      // Locate this group expr among projected items.
      std::string rendered = render_expr(*g);
      for (size_t i = 0; i < s.items.size(); ++i) {
        if (s.items[i].star) continue;
        if (render_expr(*resolve_alias(s.items[i].expr, s)) == rendered) {
          out_idx = static_cast<int>(i);
          break;
        }
      }
    }
  }
  (void)key_cols;
  if (out_idx < 0)
    raise(ErrorCode::NotFinalizable,
          "FINAL over a grouped query must group by (a truncation of) the finalized time column");

  // A group is complete when the predicate holds for the whole granule.
  Rel out;
  out.cols = body.cols;
  for (const Row& r : body.rows) {
    const Value& k = r[out_idx];
    if (k.is_null()) continue;
    Timestamp end = as_ts(k);
    end.secs += unit_secs - 1;
    Row probe(src->schema.size(), Value::null());
    int ci = src->col_index(time_col);
    probe[ci] = Value::timestamp(end);
    Value ok = eval_expr_on_table_row(eng_, *pred, *src, probe, opt_.stamp, opt_.now);
    if (is_true(ok)) out.rows.push_back(r);
  }
  return dedup_against_cursor(out, cursor);
}

Rel Evaluator::eval_row_final(const QuerySpec& s, const Scope* outer, Cursor* cursor) {
  if (s.finalize) {
    // The read-finalize clause already restricts to final rows.
    Rel rel = spec(s, outer);
    return dedup_against_cursor(rel, cursor);
  }
  if (s.from.size() != 1 || s.from[0].kind != FromItem::Kind::Table ||
      cte_ast_.count(to_upper(s.from[0].table))) {
    // Other sources are final only through their own metadata.
    Rel probe = lateral_join(s.from, outer);
    if (probe.finalize_pred || probe.insert_only_source) {
      Rel rel = spec(s, outer, &probe);
      return dedup_against_cursor(rel, cursor);
    }
    raise(ErrorCode::NotFinalizable,
          "FINAL requires an insert-only source, a finalization predicate, or an increasing "
          "constraint");
  }
  const TableState* t = eng_.find_table(s.from[0].table);
  if (!t) raise(ErrorCode::UnknownTable, "unknown table " + s.from[0].table);
  bool has_increasing = t->increasing && t->increasing->enabled;
  if (!t->insert_only && t->finalizers.empty() && !has_increasing)
    raise(ErrorCode::NotFinalizable,
          "FINAL over " + t->name +
              " needs INSERT ONLY, a FINALIZE constraint, or an INCREASING constraint");

  // Build the final-row restriction of the table.
  Rel base = table_scan(*t, s.from[0].alias);
  Rel finals;
  finals.cols = base.cols;
  finals.insert_only_source = base.insert_only_source;
  int inc_idx = has_increasing ? t->col_index(t->increasing->column) : -1;
  for (const Row& r : base.rows) {
    bool is_final = t->insert_only;
    for (const auto& fc : t->finalizers) {
      if (is_final) break;
      Value v = eval_expr_on_table_row(eng_, *fc.predicate, *t, r, opt_.stamp, opt_.now);
      if (is_true(v)) is_final = true;
    }
    if (!is_final && has_increasing && inc_idx >= 0 && !t->increasing->c_max.is_null()) {
      Value bound = t->increasing->c_max;
      if (t->increasing->grace_secs)
        bound = bound.sub(Value::interval(Interval{*t->increasing->grace_secs}));
      auto c = r[inc_idx].compare(bound);
      if (c && *c < 0) is_final = true;
    }
    if (is_final) finals.rows.push_back(r);
  }
  Rel rel = spec(s, outer, &finals);
  return dedup_against_cursor(rel, cursor);
}

}  // namespace streamsql

// Split across the namespace purely to keep the member definitions near their
// declaration order readable.
namespace streamsql {

// ---------------------------------------------------------------------------
// free functions

Rel eval_query_rel(const Engine& eng, const QueryExpr& q, const EvalOptions& opt) {
  Evaluator ev(eng, opt);
  return ev.query(q, nullptr, true);
}

Value eval_expr_on_table_row(const Engine& eng, const Expr& e, const TableState& table,
                             const Row& row, int64_t stamp, Timestamp now) {
  EvalOptions opt;
  opt.stamp = stamp;
  opt.now = now;
  Evaluator ev(eng, opt);
  Rel rel;
  for (const auto& col : table.schema) rel.cols.push_back({col.name, table.name, false, col.type});
  Scope sc;
  Scope::Frame frame{&rel, &row};
  sc.frames.push_back(frame);
  return ev.eval_expr(e, &sc);
}

Value eval_scalar(const Engine& eng, const Expr& e, int64_t stamp, Timestamp now) {
  EvalOptions opt;
  opt.stamp = stamp;
  opt.now = now;
  Evaluator ev(eng, opt);
  return ev.eval_expr(e, nullptr);
}

BagDelta bag_diff(const std::vector<Row>& before, const std::vector<Row>& after) {
  BagDelta delta;
  std::vector<bool> matched(before.size(), false);
  for (const Row& a : after) {
    bool found = false;
    for (size_t i = 0; i < before.size(); ++i) {
      if (!matched[i] && compare_rows(before[i], a) == 0) {
        matched[i] = true;
        found = true;
        break;
      }
    }
    if (!found) delta.added.push_back(a);
  }
  for (size_t i = 0; i < before.size(); ++i)
    if (!matched[i]) delta.removed.push_back(before[i]);
  return delta;
}

namespace {

void walk_from(const FromItem& f, const std::function<void(const FromItem&)>& fn);

void walk_query(const QueryExpr& q, const std::function<void(const FromItem&)>& fn) {
  for (const auto& [_, sub] : q.ctes) walk_query(*sub, fn);
  if (q.spec) {
    for (const auto& f : q.spec->from) walk_from(f, fn);
    // Subqueries in expressions contribute dependencies too.
    std::function<void(const Expr&)> walk_expr = [&](const Expr& e) {
      if (e.subquery) walk_query(*e.subquery, fn);
      for (const auto& c : {e.lhs, e.rhs})
        if (c) walk_expr(*c);
      for (const auto& a : e.args)
        if (a) walk_expr(*a);
    };
    const QuerySpec& s = *q.spec;
    for (const auto& item : s.items)
      if (item.expr) walk_expr(*item.expr);
    if (s.where) walk_expr(*s.where);
    if (s.finalize) walk_expr(*s.finalize);
    for (const auto& g : s.group_by) walk_expr(*g);
    for (const auto& o : s.order_by) walk_expr(*o.expr);
  }
  if (q.left) walk_query(*q.left, fn);
  if (q.right) walk_query(*q.right, fn);
}

void walk_from(const FromItem& f, const std::function<void(const FromItem&)>& fn) {
  fn(f);
  if (f.subquery) walk_query(*f.subquery, fn);
  for (const auto& c : f.children) walk_from(c, fn);
}

}  // namespace

bool query_has_implicit_changes(const QueryExpr& q) {
  bool found = false;
  walk_query(q, [&](const FromItem& f) {
    if (f.kind == FromItem::Kind::Changes && !f.changes_from) found = true;
  });
  return found;
}

std::vector<std::string> query_base_tables(const QueryExpr& q) {
  std::set<std::string> names;
  std::set<std::string> ctes;
  for (const auto& [name, _] : q.ctes) ctes.insert(to_upper(name));
  walk_query(q, [&](const FromItem& f) {
    if (f.kind == FromItem::Kind::Table && !ctes.count(to_upper(f.table)))
      names.insert(to_upper(f.table));
    if (f.kind == FromItem::Kind::Changes && !f.changes_table.empty() &&
        !ctes.count(to_upper(f.changes_table)))
      names.insert(to_upper(f.changes_table));
  });
  return {names.begin(), names.end()};
}

std::string first_time_column(const Expr& pred, const TableState& table) {
  std::string found;
  std::function<void(const Expr&)> walk = [&](const Expr& e) {
    if (!found.empty()) return;
    if (e.kind == Expr::Kind::ColumnRef) {
      int i = table.col_index(e.name);
      if (i >= 0 && (table.schema[i].type == ColumnType::Date ||
                     table.schema[i].type == ColumnType::Timestamp))
        found = table.schema[i].name;
      return;
    }
    for (const auto& c : {e.lhs, e.rhs})
      if (c) walk(*c);
    for (const auto& a : e.args)
      if (a) walk(*a);
  };
  walk(pred);
  return found;
}

// ---------------------------------------------------------------------------
// Purge-horizon overlap: conservative satisfiability of (query filter AND
// horizon predicate) over one table's rows. Atoms outside the understood
// fragment (other tables, unfoldable expressions) impose no constraint.

namespace {

struct RangeAtom {
  int col;
  BinOp op;
  Value val;
};

bool scalar_only(const Expr& e, const TableState& t) {
  if (e.kind == Expr::Kind::ColumnRef) return false;
  if (e.kind == Expr::Kind::ScalarSubquery || e.kind == Expr::Kind::Exists) return false;
  for (const auto& c : {e.lhs, e.rhs})
    if (c && !scalar_only(*c, t)) return false;
  for (const auto& a : e.args)
    if (a && !scalar_only(*a, t)) return false;
  return true;
}

// Disjunctive normal form of understood atoms, capped to keep this bounded.
void to_dnf(const Engine& eng, const TableState& t, const Expr& e, Timestamp now, int64_t stamp,
            std::vector<std::vector<RangeAtom>>& out) {
  if (e.kind == Expr::Kind::Binary && e.op == BinOp::Or) {
    to_dnf(eng, t, *e.lhs, now, stamp, out);
    if (out.size() > 16) return;
    to_dnf(eng, t, *e.rhs, now, stamp, out);
    return;
  }
  if (e.kind == Expr::Kind::Binary && e.op == BinOp::And) {
    std::vector<std::vector<RangeAtom>> l, r;
    to_dnf(eng, t, *e.lhs, now, stamp, l);
    to_dnf(eng, t, *e.rhs, now, stamp, r);
    for (const auto& a : l)
      for (const auto& b : r) {
        std::vector<RangeAtom> both = a;
        both.insert(both.end(), b.begin(), b.end());
        out.push_back(std::move(both));
        if (out.size() > 16) return;
      }
    return;
  }
  std::vector<RangeAtom> atoms;
  if (e.kind == Expr::Kind::Binary) {
    const Expr *colside = nullptr, *valside = nullptr;
    BinOp op = e.op;
    if (e.lhs->kind == Expr::Kind::ColumnRef && scalar_only(*e.rhs, t)) {
      colside = e.lhs.get();
      valside = e.rhs.get();
    } else if (e.rhs->kind == Expr::Kind::ColumnRef && scalar_only(*e.lhs, t)) {
      colside = e.rhs.get();
      valside = e.lhs.get();
      switch (e.op) {  // mirror the comparison
        case BinOp::Lt: op = BinOp::Gt; break;
        case BinOp::Le: op = BinOp::Ge; break;
        case BinOp::Gt: op = BinOp::Lt; break;
        case BinOp::Ge: op = BinOp::Le; break;
        default: break;
      }
    }
    if (colside) {
      int ci = t.col_index(colside->name);
      if (ci >= 0 && (op == BinOp::Eq || op == BinOp::Lt || op == BinOp::Le || op == BinOp::Gt ||
                      op == BinOp::Ge)) {
        try {
          Value v = eval_scalar(eng, *valside, stamp, now);
          if (!v.is_null()) atoms.push_back({ci, op, v});
        } catch (const EngineError&) {
          // not foldable: no constraint
        }
      }
    }
  }
  out.push_back(std::move(atoms));
}

bool conjunction_feasible(const std::vector<RangeAtom>& atoms, size_t ncols) {
  for (size_t c = 0; c < ncols; ++c) {
    std::optional<Value> lo, hi, eq;
    bool lo_strict = false, hi_strict = false;
    for (const auto& a : atoms) {
      if (a.col != static_cast<int>(c)) continue;
      try {
        switch (a.op) {
          case BinOp::Eq:
            if (eq && eq->compare(a.val) && *eq->compare(a.val) != 0) return false;
            eq = a.val;
            break;
          case BinOp::Lt:
          case BinOp::Le: {
            bool strict = a.op == BinOp::Lt;
            if (!hi || *a.val.compare(*hi) < 0 || (*a.val.compare(*hi) == 0 && strict)) {
              hi = a.val;
              hi_strict = strict;
            }
            break;
          }
          case BinOp::Gt:
          case BinOp::Ge: {
            bool strict = a.op == BinOp::Gt;
            if (!lo || *a.val.compare(*lo) > 0 || (*a.val.compare(*lo) == 0 && strict)) {
              lo = a.val;
              lo_strict = strict;
            }
            break;
          }
          default: break;
        }
      } catch (const EngineError&) {
        return true;  // incomparable – stay conservative
      }
    }
    try {
      if (eq) {
        if (lo) {
          auto cmp = eq->compare(*lo);
          if (cmp && (*cmp < 0 || (*cmp == 0 && lo_strict))) return false;
        }
        if (hi) {
          auto cmp = eq->compare(*hi);
          if (cmp && (*cmp > 0 || (*cmp == 0 && hi_strict))) return false;
        }
      } else if (lo && hi) {
        auto cmp = lo->compare(*hi);
        if (cmp && (*cmp > 0 || (*cmp == 0 && (lo_strict || hi_strict)))) return false;
      }
    } catch (const EngineError&) {
      return true;
    }
  }
  return true;
}

}  // namespace

bool predicates_may_overlap(const Engine& eng, const TableState& table, const Expr* a,
                            Timestamp now_a, const Expr& b, Timestamp now_b, int64_t stamp) {
  std::vector<std::vector<RangeAtom>> da, db;
  if (a)
    to_dnf(eng, table, *a, now_a, stamp, da);
  else
    da.push_back({});
  to_dnf(eng, table, b, now_b, stamp, db);
  for (const auto& ca : da)
    for (const auto& cb : db) {
      std::vector<RangeAtom> both = ca;
      both.insert(both.end(), cb.begin(), cb.end());
      if (conjunction_feasible(both, table.schema.size())) return true;
    }
  return false;
}

}  // namespace streamsql
