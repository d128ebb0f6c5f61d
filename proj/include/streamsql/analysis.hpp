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

#include <string>
#include <vector>

#include "streamsql/ast.hpp"

namespace streamsql {

class Engine;

struct ProofStep {
  std::string node;  // short description of the AST node
  std::string rule;  // rule applied, or why it failed
  bool ok = true;
};

// Result of the syntactic insert-only deduction. PROVEN means every leaf is
// an insert-only table, a CHANGES node, or composed through the closed rules;
// UNKNOWN is always a legal (conservative) answer.
struct Proof {
  bool proven = false;
  std::vector<ProofStep> trace;
  std::string failing;  // first failing node description when UNKNOWN
};

Proof prove_insert_only(const Engine& eng, const QueryExpr& q);

enum class Monotonicity { Monotone, Unknown };

// A predicate is monotone when, per fixed row, its truth can never flip from
// true to false as the engine advances: deterministic row-local comparisons,
// col </<= f(now()) with f non-decreasing, col <= (SELECT MAX(..) FROM t)
// over insert-only/increasing sources, and AND/OR combinations thereof.
Monotonicity check_monotone_predicate(const Engine& eng, const Expr& pred,
                                      const TableState& table, std::string* why = nullptr);

std::string render_proof(const Proof& p);

}  // namespace streamsql
