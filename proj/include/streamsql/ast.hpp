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

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "streamsql/value.hpp"

namespace streamsql {

struct QueryExpr;
using QueryPtr = std::shared_ptr<QueryExpr>;

// ---------------------------------------------------------------------------
// Expressions

enum class BinOp { Eq, Ne, Lt, Le, Gt, Ge, Add, Sub, Mul, Div, And, Or };
enum class AggKind { CountStar, Count, Sum, Avg, Min, Max };

struct Expr;
using ExprPtr = std::shared_ptr<Expr>;

struct Expr {
  enum class Kind {
    Literal,
    ColumnRef,
    Binary,
    Not,
    IsNull,      // negated => IS NOT NULL
    Exists,      // negated => NOT EXISTS
    ScalarSubquery,
    FuncCall,    // now(), dateadd(...), date_trunc(...), floor(x TO unit), ...
    Aggregate,
    LastScheduleTime,
  };

  Kind kind;
  Value literal;
  std::string qualifier;  // ColumnRef: optional table alias
  std::string name;       // ColumnRef column / FuncCall function name
  BinOp op = BinOp::Eq;
  ExprPtr lhs, rhs;       // Binary; Not/IsNull use lhs only
  bool negated = false;
  QueryPtr subquery;      // Exists / ScalarSubquery
  std::vector<ExprPtr> args;
  AggKind agg = AggKind::CountStar;

  static ExprPtr lit(Value v);
  static ExprPtr column(std::string qualifier, std::string name);
  static ExprPtr binary(BinOp op, ExprPtr l, ExprPtr r);
  static ExprPtr func(std::string name, std::vector<ExprPtr> args);
};

// ---------------------------------------------------------------------------
// Queries

struct SelectItem {
  bool star = false;
  std::string star_qualifier;  // t.* when set
  ExprPtr expr;
  std::string alias;
};

// Range partitioning attached to a FROM item. Bounds default to
// WIN_START/WIN_END; start defaults to 0 / the engine epoch.
struct WindowClause {
  ExprPtr column;  // ColumnRef into the underlying relation
  ExprPtr start;
  ExprPtr range;
  ExprPtr advance;
  ExprPtr grace;
  std::string start_bound = "WIN_START";
  std::string end_bound = "WIN_END";
  bool hopping_sugar = false;  // WINDOW HOPPING(...)/TUMBLING(...) shorthand
};

struct FromItem {
  enum class Kind { Table, Subquery, Changes, TableFunc, Group };
  Kind kind = Kind::Table;
  std::string table;
  std::string alias;
  QueryPtr subquery;  // Subquery, or the relation argument of CHANGES
  // CHANGES(relation [, from [, to]] [, 'FORMAT'])
  std::string changes_table;  // when the relation is a plain table name
  ExprPtr changes_from;       // null: implicit resume position
  ExprPtr changes_to;
  std::string changes_format;  // "", "DELTA", "LOG"
  // TABLE(func(args))
  std::string func_name;
  std::vector<ExprPtr> func_args;
  // Parenthesized comma-join (left-correlated)
  std::vector<FromItem> children;

  std::shared_ptr<WindowClause> window;  // postfix window subquery
};

struct OrderKey {
  ExprPtr expr;
  bool desc = false;
};

struct QuerySpec {
  bool continuous = false;  // SELECT CONTINUOUS
  std::vector<SelectItem> items;
  std::vector<FromItem> from;
  ExprPtr where;
  std::vector<ExprPtr> group_by;
  ExprPtr finalize;  // FINALIZE WHERE <pred> (finalization on read)
  std::vector<OrderKey> order_by;
  std::optional<int64_t> limit;
};

struct QueryExpr {
  enum class Kind { Spec, Final, Union, Intersect };
  Kind kind = Kind::Spec;
  std::shared_ptr<QuerySpec> spec;
  QueryPtr left, right;  // set ops; Final wraps left
  bool union_all = false;
  // WITH list applies to the whole expression.
  std::vector<std::pair<std::string, QueryPtr>> ctes;
};

// ---------------------------------------------------------------------------
// Statements

enum class ColumnType { Bool, Int, Number, Text, Date, Timestamp };

const char* column_type_name(ColumnType t);

struct ColumnDef {
  std::string name;
  ColumnType type = ColumnType::Text;
};

struct ConstraintState {
  bool enabled = true;
  bool deferred = false;
  bool rely = false;
};

struct ScheduleTrigger {
  enum class Kind { OnCommit, Periodic, OnDemand };
  Kind kind = Kind::OnCommit;
  bool asynchronous = false;
  std::vector<std::string> tables;  // COMMIT ON <tables>
  int64_t period_secs = 0;
};

struct Schedule {
  std::vector<ScheduleTrigger> triggers;
  std::optional<int64_t> end_count;
  ExprPtr end_time;
};

struct ErrorPolicy {
  bool log_errors = false;
  std::string log_table;
  int64_t reject_limit = 0;
  int64_t retry_limit = 0;
};

struct MergeAction {
  std::string target;
  QueryPtr source;
  std::string source_alias;
  ExprPtr on;
  std::vector<std::pair<std::string, ExprPtr>> update_set;
  ExprPtr delete_where;
  std::vector<std::string> insert_columns;
  std::vector<ExprPtr> insert_values;
};

struct Statement {
  enum class Kind {
    Select,
    Insert,
    Update,
    Delete,
    Begin,
    Commit,
    Rollback,
    CreateTable,
    AlterTable,
    CreateTask,
    AlterTask,
    DropTask,
    ExecuteTask,
    DeclareCursor,
    OpenCursor,
    FetchCursor,
    CloseCursor,
    Subscribe,
    Set,
  };

  Kind kind;

  QueryPtr query;  // Select / Subscribe / cursor declaration / INSERT..SELECT

  // INSERT / UPDATE / DELETE
  std::string table;
  std::vector<std::string> columns;
  std::vector<std::vector<ExprPtr>> values_rows;
  std::vector<std::pair<std::string, ExprPtr>> assignments;
  ExprPtr where;

  // CREATE TABLE
  std::vector<ColumnDef> table_columns;
  bool insert_only = false;
  ExprPtr expire_where;

  // ALTER TABLE
  enum class AlterVerb {
    InsertOnly,
    DropInsertOnly,
    AddIncreasing,
    Finalize,
    AddExpire,
    ModifyExpire,
    DropExpire,
  };
  AlterVerb alter_verb = AlterVerb::InsertOnly;
  std::string constraint_column;
  bool strictly = false;
  ExprPtr grace;
  ConstraintState constraint_state;
  ExprPtr predicate;  // FINALIZE / EXPIRE predicate

  // Tasks
  std::string task_name;
  Schedule schedule;
  bool schedule_present = false;
  enum class TaskAction { InsertSelect, Merge, ApplyChanges };
  TaskAction task_action = TaskAction::InsertSelect;
  std::string task_target;
  std::shared_ptr<MergeAction> merge;
  ErrorPolicy error_policy;
  bool initial_snapshot = false;
  enum class TaskVerb { Pause, Resume, Stop };
  TaskVerb task_verb = TaskVerb::Pause;

  // Cursors / SUBSCRIBE
  std::string cursor_name;
  std::optional<int64_t> fetch_count;

  // SET <name> = <word>
  std::string set_name;
  std::string set_value;
};

using StatementPtr = std::shared_ptr<Statement>;

// Canonical SQL rendering; parse(render(s)) is structurally equal to s.
std::string render_statement(const Statement& s);
std::string render_query(const QueryExpr& q);
std::string render_expr(const Expr& e);

bool ident_eq(const std::string& a, const std::string& b);
std::string to_upper(std::string s);

}  // namespace streamsql
