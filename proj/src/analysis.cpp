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
#include "streamsql/analysis.hpp"

#include <functional>
#include <map>
#include <set>

#include "streamsql/engine.hpp"

namespace streamsql {

namespace {

// Deduction context: CTE verdicts act like table verdicts.
struct AnalysisCtx {
  const Engine* eng;
  std::map<std::string, bool> cte_insert_only;
  Proof* proof;

  void step(const std::string& node, const std::string& rule, bool ok) {
    proof->trace.push_back({node, rule, ok});
    if (!ok && proof->failing.empty()) proof->failing = node + ": " + rule;
  }
};

bool expr_deterministic_row_local(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Literal:
    case Expr::Kind::ColumnRef: return true;
    case Expr::Kind::Binary:
      return expr_deterministic_row_local(*e.lhs) && expr_deterministic_row_local(*e.rhs);
    case Expr::Kind::Not:
      return expr_deterministic_row_local(*e.lhs);
    case Expr::Kind::IsNull: return expr_deterministic_row_local(*e.lhs);
    case Expr::Kind::FuncCall: {
      if (e.name == "now" || e.name == "current_timestamp") return false;
      for (const auto& a : e.args)
        if (!expr_deterministic_row_local(*a)) return false;
      return true;
    }
    case Expr::Kind::Exists:
    case Expr::Kind::ScalarSubquery:
    case Expr::Kind::Aggregate:
    case Expr::Kind::LastScheduleTime: return false;
  }
  return false;
}

// Non-decreasing as the clock advances: now() shifted by constants.
bool nondecreasing_in_time(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Literal: return true;
    case Expr::Kind::FuncCall:
      if (e.name == "now" || e.name == "current_timestamp") return true;
      if (e.name == "dateadd" && e.args.size() == 3)
        return e.args[0]->kind == Expr::Kind::Literal && nondecreasing_in_time(*e.args[2]);
      if ((e.name == "date_trunc" || e.name == "floor") && e.args.size() == 2)
        return nondecreasing_in_time(*e.args[e.name == "date_trunc" ? 1 : 0]);
      return false;
    case Expr::Kind::Binary:
      if (e.op == BinOp::Add || e.op == BinOp::Sub)
        return nondecreasing_in_time(*e.lhs) && e.rhs->kind == Expr::Kind::Literal;
      return false;
    default: return false;
  }
}

// col <= (SELECT MAX(c2) FROM t2) over an insert-only table or an increasing
// column: the bound never decreases.
bool max_over_growing_source(const Engine& eng, const Expr& e) {
  if (e.kind != Expr::Kind::ScalarSubquery || !e.subquery) return false;
  const QueryExpr& q = *e.subquery;
  if (q.kind != QueryExpr::Kind::Spec || !q.spec) return false;
  const QuerySpec& s = *q.spec;
  if (s.items.size() != 1 || s.items[0].star) return false;
  const Expr& item = *s.items[0].expr;
  if (item.kind != Expr::Kind::Aggregate || item.agg != AggKind::Max) return false;
  if (s.from.size() != 1 || s.from[0].kind != FromItem::Kind::Table) return false;
  if (s.where || !s.group_by.empty()) return false;
  const TableState* t = eng.find_table(s.from[0].table);
  if (!t) return false;
  if (t->insert_only) return true;
  if (t->increasing && t->increasing->enabled && item.args.size() == 1 &&
      item.args[0]->kind == Expr::Kind::ColumnRef &&
      ident_eq(item.args[0]->name, t->increasing->column))
    return true;
  return false;
}

bool monotone_expr(const Engine& eng, const Expr& e, std::string* why);

bool monotone_comparison(const Engine& eng, const Expr& e) {
  if (e.kind != Expr::Kind::Binary) return false;
  // Normalize to col OP bound.
  const Expr *col = nullptr, *bound = nullptr;
  BinOp op = e.op;
  if (e.lhs->kind == Expr::Kind::ColumnRef) {
    col = e.lhs.get();
    bound = e.rhs.get();
  } else if (e.rhs->kind == Expr::Kind::ColumnRef) {
    col = e.rhs.get();
    bound = e.lhs.get();
    switch (e.op) {
      case BinOp::Lt: op = BinOp::Gt; break;
      case BinOp::Le: op = BinOp::Ge; break;
      case BinOp::Gt: op = BinOp::Lt; break;
      case BinOp::Ge: op = BinOp::Le; break;
      default: break;
    }
  }
  if (!col || !bound) return false;
  if (op != BinOp::Lt && op != BinOp::Le) return false;
  return nondecreasing_in_time(*bound) || max_over_growing_source(eng, *bound);
}

bool monotone_expr(const Engine& eng, const Expr& e, std::string* why) {
  if (expr_deterministic_row_local(e)) return true;
  if (e.kind == Expr::Kind::Binary && (e.op == BinOp::And || e.op == BinOp::Or)) {
    return monotone_expr(eng, *e.lhs, why) && monotone_expr(eng, *e.rhs, why);
  }
  if (monotone_comparison(eng, e)) return true;
  // EXISTS over an insert-only subquery can only flip false -> true.
  if (e.kind == Expr::Kind::Exists && !e.negated) {
    try {
      if (prove_insert_only(eng, *e.subquery).proven) return true;
    } catch (const EngineError&) {
      // unresolved names inside: fall through to UNKNOWN
    }
  }
  if (why && why->empty()) *why = "predicate '" + render_expr(e) + "' may flip from true to false";
  return false;
}

// ------------------------------------------------------------------
// Insert-only deduction over the query AST (syntactic, conservative).

bool query_insert_only(AnalysisCtx& ctx, const QueryExpr& q);

bool from_insert_only(AnalysisCtx& ctx, const FromItem& f) {
  switch (f.kind) {
    case FromItem::Kind::Table: {
      auto it = ctx.cte_insert_only.find(to_upper(f.table));
      if (it != ctx.cte_insert_only.end()) {
        ctx.step("with member " + f.table, it->second ? "insert-only by deduction" : "not proven",
                 it->second);
        return it->second;
      }
      const TableState* t = ctx.eng->find_table(f.table);
      if (!t) {
        raise(ErrorCode::UnresolvedName, "unknown table " + f.table);
      }
      ctx.step("table " + t->name,
               t->insert_only ? "INSERT ONLY constraint" : "no INSERT ONLY constraint",
               t->insert_only);
      return t->insert_only;
    }
    case FromItem::Kind::Changes:
      // A change log only grows with time.
      if (f.subquery) {
        // Still resolve names inside for error reporting.
      }
      ctx.step("CHANGES(" + (f.changes_table.empty() ? "<query>" : f.changes_table) + ")",
               "change logs are insert-only", true);
      return true;
    case FromItem::Kind::Subquery: return query_insert_only(ctx, *f.subquery);
    case FromItem::Kind::TableFunc:
      ctx.step("TABLE(" + f.func_name + ")", "table function outside the deduction rules", false);
      return false;
    case FromItem::Kind::Group: {
      for (const auto& c : f.children)
        if (!from_insert_only(ctx, c)) return false;
      return true;
    }
  }
  return false;
}

bool spec_insert_only(AnalysisCtx& ctx, const QuerySpec& s) {
  if (!s.group_by.empty()) {
    ctx.step("query specification", "has a GROUP BY clause", false);
    return false;
  }
  for (const auto& item : s.items) {
    if (!item.star && item.expr->kind == Expr::Kind::Aggregate) {
      ctx.step("select list", "aggregates imply grouping", false);
      return false;
    }
    if (!item.star && item.expr->kind != Expr::Kind::Aggregate) {
      // Per-row expressions over insert-only rows stay fixed per row; only
      // nondeterministic items break the argument.
      if (!expr_deterministic_row_local(*item.expr) &&
          item.expr->kind != Expr::Kind::ColumnRef) {
        ctx.step("select item " + render_expr(*item.expr), "not a per-row constant", false);
        return false;
      }
    }
  }
  if (!s.order_by.empty() || s.limit) {
    ctx.step("ORDER BY/LIMIT", "result window can shrink as rows arrive", false);
    return false;
  }
  for (const auto& f : s.from) {
    if (f.window) {
      ctx.step("window subquery", "window clauses are outside the deduction rules", false);
      return false;
    }
    if (!from_insert_only(ctx, f)) return false;
  }
  if (s.where) {
    std::string why;
    bool ok = monotone_expr(*ctx.eng, *s.where, &why);
    ctx.step("WHERE " + render_expr(*s.where),
             ok ? "monotone search condition" : "search condition not provably monotone", ok);
    if (!ok) return false;
  }
  if (s.finalize) {
    std::string why;
    bool ok = monotone_expr(*ctx.eng, *s.finalize, &why);
    ctx.step("FINALIZE " + render_expr(*s.finalize),
             ok ? "monotone finalization predicate" : "finalization predicate not monotone", ok);
    if (!ok) return false;
  }
  ctx.step("query specification", "insert-only table expression", true);
  return true;
}

bool query_insert_only(AnalysisCtx& ctx, const QueryExpr& q) {
  // WITH list: each member must itself be insert-only to be referenced.
  std::vector<std::string> added;
  for (const auto& [name, body] : q.ctes) {
    bool ok = query_insert_only(ctx, *body);
    ctx.cte_insert_only[to_upper(name)] = ok;
    added.push_back(to_upper(name));
  }
  bool result = false;
  switch (q.kind) {
    case QueryExpr::Kind::Spec: result = spec_insert_only(ctx, *q.spec); break;
    case QueryExpr::Kind::Final:
      ctx.step("FINAL(...)", "FINAL is outside the deduction rules", false);
      result = false;
      break;
    case QueryExpr::Kind::Union:
      if (!q.union_all) {
        ctx.step("UNION", "plain UNION deduplicates; use UNION ALL", false);
        result = false;
      } else {
        result = query_insert_only(ctx, *q.left) && query_insert_only(ctx, *q.right);
        if (result) ctx.step("UNION ALL", "both branches insert-only", true);
      }
      break;
    case QueryExpr::Kind::Intersect:
      result = query_insert_only(ctx, *q.left) && query_insert_only(ctx, *q.right);
      if (result) ctx.step("INTERSECT", "both branches insert-only", true);
      break;
  }
  for (const auto& k : added) ctx.cte_insert_only.erase(k);
  return result;
}

}  // namespace

Proof prove_insert_only(const Engine& eng, const QueryExpr& q) {
  Proof p;
  AnalysisCtx ctx{&eng, {}, &p};
  p.proven = query_insert_only(ctx, q);
  return p;
}

Monotonicity check_monotone_predicate(const Engine& eng, const Expr& pred,
                                      const TableState& table, std::string* why) {
  // Unknown column names are errors, not an UNKNOWN verdict.
  std::function<void(const Expr&)> resolve = [&](const Expr& e) {
    if (e.kind == Expr::Kind::ColumnRef && e.qualifier.empty()) {
      if (table.col_index(e.name) < 0)
        raise(ErrorCode::UnresolvedName,
              "unknown column " + e.name + " in predicate over " + table.name);
    }
    for (const auto& c : {e.lhs, e.rhs})
      if (c) resolve(*c);
    for (const auto& a : e.args)
      if (a) resolve(*a);
    // subqueries resolve at evaluation time
  };
  resolve(pred);
  std::string local;
  bool ok = monotone_expr(eng, pred, why ? why : &local);
  return ok ? Monotonicity::Monotone : Monotonicity::Unknown;
}

std::string render_proof(const Proof& p) {
  std::string out = p.proven ? "insert-only: PROVEN\n" : "insert-only: UNKNOWN\n";
  for (const auto& s : p.trace)
    out += "  " + std::string(s.ok ? "[ok] " : "[--] ") + s.node + ": " + s.rule + "\n";
  if (!p.proven && !p.failing.empty()) out += "  first failing node: " + p.failing + "\n";
  return out;
}

}  // namespace streamsql
