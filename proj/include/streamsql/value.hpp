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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace streamsql {

// Engine-wide error codes. Every user-visible failure carries one of these;
// script expectations match on the code name.
enum class ErrorCode {
  SyntaxError,
  UnresolvedName,
  TypeError,
  ClockRegression,
  TxnAlreadyOpen,
  NoOpenTxn,
  DdlInTxn,
  SchemaMismatch,
  IncreasingViolation,
  InsertOnlyViolation,
  FinalizedRowInsert,
  FinalizedRowMutation,
  NonMonotonePredicate,
  NotInsertOnly,
  NotFinalizable,
  DuplicateCursor,
  UnknownCursor,
  CursorNotOpen,
  CursorAlreadyOpen,
  DuplicateTask,
  UnknownTask,
  UnknownTarget,
  IllegalTransition,
  InvalidRange,
  UnknownFormat,
  ApplyConflict,
  TaskExecutionFailed,
  PolicyExists,
  NoPolicy,
  ExpiredDataError,
  DuplicateTable,
  UnknownTable,
  SemanticError,
  IoError,
};

const char* error_code_name(ErrorCode code);

struct EngineError {
  ErrorCode code;
  std::string message;
};

[[noreturn]] void raise(ErrorCode code, const std::string& message);

// Exact decimal: coefficient * 10^-scale, normalized so the coefficient
// carries no trailing zero digits (10.50 and 10.5 are the same value).
struct Decimal {
  int64_t coeff = 0;
  int32_t scale = 0;

  static Decimal make(int64_t coeff, int32_t scale);
  static Decimal from_int(int64_t v) { return make(v, 0); }
  static std::optional<Decimal> parse(const std::string& text);

  Decimal plus(const Decimal& o) const;
  Decimal minus(const Decimal& o) const;
  Decimal times(const Decimal& o) const;
  // Division rounds half-up at 12 fractional digits, then normalizes.
  Decimal divided_by(const Decimal& o) const;
  int compare(const Decimal& o) const;
  std::string render() const;
};

// How a timestamp literal was written; computed timestamps inherit the style
// of their operands so transcripts echo the script's own notation.
enum class TsStyle : uint8_t {
  Clock,    // 12:01 or 14:55:50 (time-of-day label on the engine base date)
  DateDmy2, // 15-NOV-19
  DateDmy4, // 15-DEC-2019 14:55:00
  Iso,      // 2023-11-01 00:00:00
};

// Logical calendar point, seconds since 1970-01-01 00:00:00.
struct Timestamp {
  int64_t secs = 0;
  TsStyle style = TsStyle::Iso;

  static std::optional<Timestamp> parse(const std::string& text);
  std::string render() const;
};

// Civil-calendar helpers (proleptic Gregorian).
int64_t days_from_civil(int y, unsigned m, unsigned d);
void civil_from_days(int64_t z, int& y, unsigned& m, unsigned& d);

enum class IntervalUnit : uint8_t { Second, Minute, Hour, Day };

// Signed duration in whole seconds; the unit is only a rendering hint.
struct Interval {
  int64_t secs = 0;
  IntervalUnit unit = IntervalUnit::Second;

  std::string render() const;
};

int64_t interval_unit_seconds(IntervalUnit unit);
std::optional<IntervalUnit> parse_interval_unit(std::string word);

enum class ValueKind : uint8_t { Null, Bool, Int, Decimal, Text, Timestamp, Interval };

const char* value_kind_name(ValueKind kind);

// Tagged scalar. Comparison is defined within a comparability class
// (numbers with numbers, timestamps with timestamps, ...); anything
// involving null compares as unknown.
class Value {
public:
  Value() : kind_(ValueKind::Null) {}

  static Value null() { return Value(); }
  static Value boolean(bool b);
  static Value integer(int64_t v);
  static Value decimal(Decimal d);
  static Value text(std::string s);
  static Value timestamp(Timestamp t);
  static Value interval(Interval i);

  ValueKind kind() const { return kind_; }
  bool is_null() const { return kind_ == ValueKind::Null; }

  bool as_bool() const { return bool_; }
  int64_t as_int() const { return int_; }
  const Decimal& as_decimal() const { return dec_; }
  const std::string& as_text() const { return text_; }
  const Timestamp& as_timestamp() const { return ts_; }
  const Interval& as_interval() const { return iv_; }

  // Three-valued comparison: nullopt when either side is null.
  // Throws TypeError for incomparable kinds.
  std::optional<int> compare(const Value& o) const;

  // Total order used for deterministic output sorting and map keys.
  // Nulls first, then by kind rank, then by value. Never throws.
  int total_order(const Value& o) const;
  bool identical(const Value& o) const { return total_order(o) == 0; }

  Value add(const Value& o) const;
  Value sub(const Value& o) const;
  Value mul(const Value& o) const;
  Value div(const Value& o) const;

  std::string render() const;
  // Feeds deterministic synthetic row ids; independent of display style.
  void hash_into(uint64_t& h) const;

private:
  ValueKind kind_;
  bool bool_ = false;
  int64_t int_ = 0;
  Decimal dec_;
  std::string text_;
  Timestamp ts_;
  Interval iv_;
};

using Row = std::vector<Value>;

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 1469598103934665603ull);
uint64_t hash_row(const Row& row, uint64_t seed = 1469598103934665603ull);

// Lexicographic total order on rows (total_order per element).
int compare_rows(const Row& a, const Row& b);

}  // namespace streamsql
