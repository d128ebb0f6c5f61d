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
#include "streamsql/value.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace streamsql {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::UnresolvedName: return "UnresolvedName";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::ClockRegression: return "ClockRegression";
    case ErrorCode::TxnAlreadyOpen: return "TxnAlreadyOpen";
    case ErrorCode::NoOpenTxn: return "NoOpenTxn";
    case ErrorCode::DdlInTxn: return "DdlInTxn";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::IncreasingViolation: return "IncreasingViolation";
    case ErrorCode::InsertOnlyViolation: return "InsertOnlyViolation";
    case ErrorCode::FinalizedRowInsert: return "FinalizedRowInsert";
    case ErrorCode::FinalizedRowMutation: return "FinalizedRowMutation";
    case ErrorCode::NonMonotonePredicate: return "NonMonotonePredicate";
    case ErrorCode::NotInsertOnly: return "NotInsertOnly";
    case ErrorCode::NotFinalizable: return "NotFinalizable";
    case ErrorCode::DuplicateCursor: return "DuplicateCursor";
    case ErrorCode::UnknownCursor: return "UnknownCursor";
    case ErrorCode::CursorNotOpen: return "CursorNotOpen";
    case ErrorCode::CursorAlreadyOpen: return "CursorAlreadyOpen";
    case ErrorCode::DuplicateTask: return "DuplicateTask";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::UnknownFormat: return "UnknownFormat";
    case ErrorCode::ApplyConflict: return "ApplyConflict";
    case ErrorCode::TaskExecutionFailed: return "TaskExecutionFailed";
    case ErrorCode::PolicyExists: return "PolicyExists";
    case ErrorCode::NoPolicy: return "NoPolicy";
    case ErrorCode::ExpiredDataError: return "ExpiredDataError";
    case ErrorCode::DuplicateTable: return "DuplicateTable";
    case ErrorCode::UnknownTable: return "UnknownTable";
    case ErrorCode::SemanticError: return "SemanticError";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

void raise(ErrorCode code, const std::string& message) {
  throw EngineError{code, message};
}

// ---------------------------------------------------------------------------
// Decimal

Decimal Decimal::make(int64_t coeff, int32_t scale) {
  while (scale > 0 && coeff % 10 == 0) {
    coeff /= 10;
    --scale;
  }
  if (coeff == 0) scale = 0;
  return Decimal{coeff, scale};
}

std::optional<Decimal> Decimal::parse(const std::string& text) {
  if (text.empty()) return std::nullopt;
  size_t i = 0;
  bool neg = false;
  if (text[i] == '+' || text[i] == '-') {
    neg = text[i] == '-';
    ++i;
  }
  int64_t coeff = 0;
  int32_t scale = 0;
  bool saw_digit = false, saw_dot = false;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (c == '.') {
      if (saw_dot) return std::nullopt;
      saw_dot = true;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      coeff = coeff * 10 + (c - '0');
      if (saw_dot) ++scale;
      saw_digit = true;
    } else {
      return std::nullopt;
    }
  }
  if (!saw_digit) return std::nullopt;
  if (neg) coeff = -coeff;
  return make(coeff, scale);
}

namespace {

__int128 pow10_128(int32_t n) {
  __int128 p = 1;
  for (int32_t i = 0; i < n; ++i) p *= 10;
  return p;
}

Decimal from_wide(__int128 coeff, int32_t scale) {
  while (scale > 0 && coeff % 10 == 0) {
    coeff /= 10;
    --scale;
  }
  if (coeff > INT64_MAX || coeff < INT64_MIN)
    raise(ErrorCode::TypeError, "decimal overflow");
  return Decimal{static_cast<int64_t>(coeff), coeff == 0 ? 0 : scale};
}

}  // namespace

Decimal Decimal::plus(const Decimal& o) const {
  int32_t s = std::max(scale, o.scale);
  __int128 a = static_cast<__int128>(coeff) * pow10_128(s - scale);
  __int128 b = static_cast<__int128>(o.coeff) * pow10_128(s - o.scale);
  return from_wide(a + b, s);
}

Decimal Decimal::minus(const Decimal& o) const {
  return plus(Decimal{-o.coeff, o.scale});
}

Decimal Decimal::times(const Decimal& o) const {
  __int128 p = static_cast<__int128>(coeff) * o.coeff;
  return from_wide(p, scale + o.scale);
}

Decimal Decimal::divided_by(const Decimal& o) const {
  if (o.coeff == 0) raise(ErrorCode::TypeError, "division by zero");
  constexpr int32_t kFracDigits = 12;
  __int128 num = static_cast<__int128>(coeff) * pow10_128(kFracDigits + o.scale);
  __int128 den = static_cast<__int128>(o.coeff) * pow10_128(scale);
  bool neg = (num < 0) != (den < 0);
  if (num < 0) num = -num;
  if (den < 0) den = -den;
  __int128 q = num / den;
  __int128 r = num % den;
  if (r * 2 >= den) ++q;
  return from_wide(neg ? -q : q, kFracDigits);
}

int Decimal::compare(const Decimal& o) const {
  int32_t s = std::max(scale, o.scale);
  __int128 a = static_cast<__int128>(coeff) * pow10_128(s - scale);
  __int128 b = static_cast<__int128>(o.coeff) * pow10_128(s - o.scale);
  return a < b ? -1 : (a > b ? 1 : 0);
}

std::string Decimal::render() const {
  int64_t c = coeff;
  bool neg = c < 0;
  std::string digits;
  if (c == 0) digits = "0";
  while (c != 0) {
    int64_t d = c % 10;
    if (d < 0) d = -d;
    digits.push_back(static_cast<char>('0' + d));
    c /= 10;
  }
  std::reverse(digits.begin(), digits.end());
  while (static_cast<int32_t>(digits.size()) <= scale) digits.insert(digits.begin(), '0');
  std::string out;
  if (neg) out.push_back('-');
  out.append(digits, 0, digits.size() - scale);
  if (scale > 0) {
    out.push_back('.');
    out.append(digits, digits.size() - scale, scale);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timestamp

int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097LL + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t yy = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

namespace {

const std::array<const char*, 12> kMonths = {"JAN", "FEB", "MAR", "APR", "MAY", "JUN",
                                             "JUL", "AUG", "SEP", "OCT", "NOV", "DEC"};

// Clock labels without a date live on a fixed base day so that scripts using
// only time-of-day labels stay internally consistent.
const int64_t kClockBaseDays = days_from_civil(2000, 1, 1);

int month_from_name(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (size_t i = 0; i < kMonths.size(); ++i)
    if (u == kMonths[i]) return static_cast<int>(i) + 1;
  return 0;
}

bool parse_hms(const std::string& text, int& h, int& mi, int& s) {
  h = mi = s = 0;
  int n = std::sscanf(text.c_str(), "%d:%d:%d", &h, &mi, &s);
  if (n < 2) return false;
  return h >= 0 && h < 24 && mi >= 0 && mi < 60 && s >= 0 && s < 60;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

}  // namespace

std::optional<Timestamp> Timestamp::parse(const std::string& raw) {
  std::vector<std::string> parts = split_ws(raw);
  if (parts.empty() || parts.size() > 2) return std::nullopt;
  const std::string& datepart = parts[0];
  int h = 0, mi = 0, s = 0;
  bool have_time = parts.size() == 2;
  if (have_time && !parse_hms(parts[1], h, mi, s)) return std::nullopt;

  // Bare time of day: "12:01" / "14:55:50".
  if (!have_time && datepart.find(':') != std::string::npos) {
    if (!parse_hms(datepart, h, mi, s)) return std::nullopt;
    Timestamp t;
    t.secs = kClockBaseDays * 86400 + h * 3600 + mi * 60 + s;
    t.style = TsStyle::Clock;
    return t;
  }

  // ISO: 2023-11-01.
  {
    int y, mo, d;
    if (std::sscanf(datepart.c_str(), "%d-%d-%d", &y, &mo, &d) == 3 &&
        datepart.size() >= 8 && std::isdigit(static_cast<unsigned char>(datepart[0])) &&
        std::isdigit(static_cast<unsigned char>(datepart[1])) &&
        std::isdigit(static_cast<unsigned char>(datepart[2])) &&
        std::isdigit(static_cast<unsigned char>(datepart[3]))) {
      if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
      Timestamp t;
      t.secs = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
      t.style = TsStyle::Iso;
      return t;
    }
  }

  // DD-MON-YY / DD-MON-YYYY.
  {
    int d, y;
    char mon[8];
    if (std::sscanf(datepart.c_str(), "%d-%3[A-Za-z]-%d", &d, mon, &y) == 3) {
      int mo = month_from_name(mon);
      if (mo == 0 || d < 1 || d > 31) return std::nullopt;
      TsStyle style = TsStyle::DateDmy4;
      if (y < 100) {
        style = TsStyle::DateDmy2;
        y += 2000;
      }
      Timestamp t;
      t.secs = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
      t.style = style;
      return t;
    }
  }
  return std::nullopt;
}

std::string Timestamp::render() const {
  int64_t days = secs >= 0 ? secs / 86400 : (secs - 86399) / 86400;
  int64_t tod = secs - days * 86400;
  int h = static_cast<int>(tod / 3600), mi = static_cast<int>(tod % 3600 / 60),
      s = static_cast<int>(tod % 60);
  char buf[48];
  if (style == TsStyle::Clock) {
    if (s != 0)
      std::snprintf(buf, sizeof buf, "%02d:%02d:%02d", h, mi, s);
    else
      std::snprintf(buf, sizeof buf, "%02d:%02d", h, mi);
    return buf;
  }
  int y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  std::string out;
  if (style == TsStyle::Iso) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, mo, d);
    out = buf;
  } else {
    int yy = style == TsStyle::DateDmy2 ? y % 100 : y;
    std::snprintf(buf, sizeof buf, style == TsStyle::DateDmy2 ? "%02u-%s-%02d" : "%02u-%s-%04d", d,
                  kMonths[mo - 1], yy);
    out = buf;
  }
  if (h || mi || s) {
    std::snprintf(buf, sizeof buf, " %02d:%02d:%02d", h, mi, s);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interval

int64_t interval_unit_seconds(IntervalUnit unit) {
  switch (unit) {
    case IntervalUnit::Second: return 1;
    case IntervalUnit::Minute: return 60;
    case IntervalUnit::Hour: return 3600;
    case IntervalUnit::Day: return 86400;
  }
  return 1;
}

std::optional<IntervalUnit> parse_interval_unit(std::string word) {
  for (char& c : word) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (!word.empty() && word.back() == 'S') word.pop_back();
  if (word == "SECOND") return IntervalUnit::Second;
  if (word == "MINUTE") return IntervalUnit::Minute;
  if (word == "HOUR") return IntervalUnit::Hour;
  if (word == "DAY") return IntervalUnit::Day;
  return std::nullopt;
}

std::string Interval::render() const {
  int64_t per = interval_unit_seconds(unit);
  const char* names[] = {"SECOND", "MINUTE", "HOUR", "DAY"};
  if (secs % per == 0) {
    return "INTERVAL '" + std::to_string(secs / per) + "' " + names[static_cast<int>(unit)];
  }
  return "INTERVAL '" + std::to_string(secs) + "' SECOND";
}

// ---------------------------------------------------------------------------
// Value

const char* value_kind_name(ValueKind kind) {
  switch (kind) {
    case ValueKind::Null: return "null";
    case ValueKind::Bool: return "boolean";
    case ValueKind::Int: return "integer";
    case ValueKind::Decimal: return "decimal";
    case ValueKind::Text: return "text";
    case ValueKind::Timestamp: return "timestamp";
    case ValueKind::Interval: return "interval";
  }
  return "?";
}

Value Value::boolean(bool b) {
  Value v;
  v.kind_ = ValueKind::Bool;
  v.bool_ = b;
  return v;
}

Value Value::integer(int64_t i) {
  Value v;
  v.kind_ = ValueKind::Int;
  v.int_ = i;
  return v;
}

Value Value::decimal(Decimal d) {
  Value v;
  v.kind_ = ValueKind::Decimal;
  v.dec_ = d;
  return v;
}

Value Value::text(std::string s) {
  Value v;
  v.kind_ = ValueKind::Text;
  v.text_ = std::move(s);
  return v;
}

Value Value::timestamp(Timestamp t) {
  Value v;
  v.kind_ = ValueKind::Timestamp;
  v.ts_ = t;
  return v;
}

Value Value::interval(Interval i) {
  Value v;
  v.kind_ = ValueKind::Interval;
  v.iv_ = i;
  return v;
}

namespace {

bool numeric(ValueKind k) { return k == ValueKind::Int || k == ValueKind::Decimal; }

Decimal widen(const Value& v) {
  return v.kind() == ValueKind::Int ? Decimal::from_int(v.as_int()) : v.as_decimal();
}

Timestamp coerce_ts(const Value& v) {
  if (v.kind() == ValueKind::Timestamp) return v.as_timestamp();
  if (v.kind() == ValueKind::Text) {
    auto t = Timestamp::parse(v.as_text());
    if (t) return *t;
  }
  raise(ErrorCode::TypeError, "cannot interpret " + v.render() + " as a timestamp");
}

int cmp64(int64_t a, int64_t b) { return a < b ? -1 : (a > b ? 1 : 0); }

}  // namespace

std::optional<int> Value::compare(const Value& o) const {
  if (is_null() || o.is_null()) return std::nullopt;
  if (numeric(kind_) && numeric(o.kind_)) {
    if (kind_ == ValueKind::Int && o.kind_ == ValueKind::Int) return cmp64(int_, o.int_);
    return widen(*this).compare(widen(o));
  }
  if (kind_ == ValueKind::Text && o.kind_ == ValueKind::Text)
    return text_.compare(o.text_) < 0 ? -1 : (text_ == o.text_ ? 0 : 1);
  // Text literals compare against timestamps by implicit conversion.
  if (kind_ == ValueKind::Timestamp || o.kind_ == ValueKind::Timestamp)
    return cmp64(coerce_ts(*this).secs, coerce_ts(o).secs);
  if (kind_ == ValueKind::Interval && o.kind_ == ValueKind::Interval)
    return cmp64(iv_.secs, o.iv_.secs);
  if (kind_ == ValueKind::Bool && o.kind_ == ValueKind::Bool)
    return cmp64(bool_ ? 1 : 0, o.bool_ ? 1 : 0);
  raise(ErrorCode::TypeError, std::string("cannot compare ") + value_kind_name(kind_) + " with " +
                                  value_kind_name(o.kind_));
}

int Value::total_order(const Value& o) const {
  auto rank = [](ValueKind k) {
    switch (k) {
      case ValueKind::Null: return 0;
      case ValueKind::Bool: return 1;
      case ValueKind::Int: return 2;
      case ValueKind::Decimal: return 2;  // numbers order together
      case ValueKind::Text: return 3;
      case ValueKind::Timestamp: return 4;
      case ValueKind::Interval: return 5;
    }
    return 9;
  };
  int ra = rank(kind_), rb = rank(o.kind_);
  if (ra != rb) return ra < rb ? -1 : 1;
  if (kind_ == ValueKind::Null) return 0;
  switch (ra) {
    case 1: return cmp64(bool_ ? 1 : 0, o.bool_ ? 1 : 0);
    case 2:
      if (kind_ == ValueKind::Int && o.kind_ == ValueKind::Int) return cmp64(int_, o.int_);
      return widen(*this).compare(widen(o));
    case 3: return text_.compare(o.text_) < 0 ? -1 : (text_ == o.text_ ? 0 : 1);
    case 4: return cmp64(ts_.secs, o.ts_.secs);
    case 5: return cmp64(iv_.secs, o.iv_.secs);
  }
  return 0;
}

Value Value::add(const Value& o) const {
  if (is_null() || o.is_null()) return Value::null();
  if (numeric(kind_) && numeric(o.kind_)) {
    if (kind_ == ValueKind::Int && o.kind_ == ValueKind::Int) return integer(int_ + o.int_);
    return decimal(widen(*this).plus(widen(o)));
  }
  if (kind_ == ValueKind::Timestamp && o.kind_ == ValueKind::Interval) {
    Timestamp t = ts_;
    t.secs += o.iv_.secs;
    return timestamp(t);
  }
  if (kind_ == ValueKind::Interval && o.kind_ == ValueKind::Timestamp) return o.add(*this);
  if (kind_ == ValueKind::Interval && o.kind_ == ValueKind::Interval)
    return interval(Interval{iv_.secs + o.iv_.secs, iv_.unit});
  raise(ErrorCode::TypeError, std::string("cannot add ") + value_kind_name(kind_) + " and " +
                                  value_kind_name(o.kind_));
}

Value Value::sub(const Value& o) const {
  if (is_null() || o.is_null()) return Value::null();
  if (numeric(kind_) && numeric(o.kind_)) {
    if (kind_ == ValueKind::Int && o.kind_ == ValueKind::Int) return integer(int_ - o.int_);
    return decimal(widen(*this).minus(widen(o)));
  }
  if (kind_ == ValueKind::Timestamp && o.kind_ == ValueKind::Interval) {
    Timestamp t = ts_;
    t.secs -= o.iv_.secs;
    return timestamp(t);
  }
  if (kind_ == ValueKind::Timestamp && o.kind_ == ValueKind::Timestamp)
    return interval(Interval{ts_.secs - o.ts_.secs, IntervalUnit::Second});
  if (kind_ == ValueKind::Interval && o.kind_ == ValueKind::Interval)
    return interval(Interval{iv_.secs - o.iv_.secs, iv_.unit});
  raise(ErrorCode::TypeError, std::string("cannot subtract ") + value_kind_name(o.kind_) +
                                  " from " + value_kind_name(kind_));
}

Value Value::mul(const Value& o) const {
  if (is_null() || o.is_null()) return Value::null();
  if (numeric(kind_) && numeric(o.kind_)) {
    if (kind_ == ValueKind::Int && o.kind_ == ValueKind::Int) return integer(int_ * o.int_);
    return decimal(widen(*this).times(widen(o)));
  }
  if (kind_ == ValueKind::Interval && o.kind_ == ValueKind::Int)
    return interval(Interval{iv_.secs * o.int_, iv_.unit});
  if (kind_ == ValueKind::Int && o.kind_ == ValueKind::Interval) return o.mul(*this);
  raise(ErrorCode::TypeError, std::string("cannot multiply ") + value_kind_name(kind_) + " and " +
                                  value_kind_name(o.kind_));
}

Value Value::div(const Value& o) const {
  if (is_null() || o.is_null()) return Value::null();
  if (numeric(kind_) && numeric(o.kind_)) return decimal(widen(*this).divided_by(widen(o)));
  raise(ErrorCode::TypeError, std::string("cannot divide ") + value_kind_name(kind_) + " by " +
                                  value_kind_name(o.kind_));
}

std::string Value::render() const {
  switch (kind_) {
    case ValueKind::Null: return "NULL";
    case ValueKind::Bool: return bool_ ? "TRUE" : "FALSE";
    case ValueKind::Int: return std::to_string(int_);
    case ValueKind::Decimal: return dec_.render();
    case ValueKind::Text: return text_;
    case ValueKind::Timestamp: return ts_.render();
    case ValueKind::Interval: return iv_.render();
  }
  return "?";
}

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
  uint64_t h = seed;
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void Value::hash_into(uint64_t& h) const {
  uint8_t k = static_cast<uint8_t>(kind_ == ValueKind::Decimal ? ValueKind::Int : kind_);
  h = fnv1a(&k, 1, h);
  switch (kind_) {
    case ValueKind::Null: break;
    case ValueKind::Bool: h = fnv1a(&bool_, 1, h); break;
    case ValueKind::Int: {
      // Hash integers via decimal form so 30 and 30.00 collide.
      Decimal d = Decimal::from_int(int_);
      h = fnv1a(&d.coeff, sizeof d.coeff, h);
      h = fnv1a(&d.scale, sizeof d.scale, h);
      break;
    }
    case ValueKind::Decimal:
      h = fnv1a(&dec_.coeff, sizeof dec_.coeff, h);
      h = fnv1a(&dec_.scale, sizeof dec_.scale, h);
      break;
    case ValueKind::Text: h = fnv1a(text_.data(), text_.size(), h); break;
    case ValueKind::Timestamp: h = fnv1a(&ts_.secs, sizeof ts_.secs, h); break;
    case ValueKind::Interval: h = fnv1a(&iv_.secs, sizeof iv_.secs, h); break;
  }
}

uint64_t hash_row(const Row& row, uint64_t seed) {
  uint64_t h = seed;
  for (const Value& v : row) v.hash_into(h);
  return h;
}

int compare_rows(const Row& a, const Row& b) {
  size_t n = std::min(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    int c = a[i].total_order(b[i]);
    if (c != 0) return c;
  }
  return a.size() < b.size() ? -1 : (a.size() == b.size() ? 0 : 1);
}

}  // namespace streamsql
