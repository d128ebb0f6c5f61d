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
#include "streamsql/lexer.hpp"

#include <cctype>

#include "streamsql/value.hpp"

namespace streamsql {

namespace {

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

}  // namespace

std::vector<Token> lex(const std::string& text) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto advance = [&](size_t n) {
    for (size_t k = 0; k < n; ++k) {
      if (text[i + k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    i += n;
  };

  while (i < text.size()) {
    char c = text[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    if (c == '-' && i + 1 < text.size() && text[i + 1] == '-') {
      while (i < text.size() && text[i] != '\n') advance(1);
      continue;
    }

    Token t;
    t.line = line;
    t.col = col;

    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      // HH:MM[:SS] time label
      if (j < text.size() && text[j] == ':' && j + 1 < text.size() &&
          std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
        size_t k = j + 1;
        while (k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]))) ++k;
        if (k < text.size() && text[k] == ':' && k + 1 < text.size() &&
            std::isdigit(static_cast<unsigned char>(text[k + 1]))) {
          ++k;
          while (k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]))) ++k;
        }
        t.kind = Token::Kind::TimeLabel;
        t.text = text.substr(i, k - i);
        advance(k - i);
        out.push_back(std::move(t));
        continue;
      }
      if (j < text.size() && text[j] == '.') {
        ++j;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      }
      t.kind = Token::Kind::Number;
      t.text = text.substr(i, j - i);
      advance(j - i);
      out.push_back(std::move(t));
      continue;
    }

    if (ident_start(c)) {
      size_t j = i;
      while (j < text.size() && ident_char(text[j])) ++j;
      t.kind = Token::Kind::Ident;
      t.text = text.substr(i, j - i);
      t.upper = to_upper(t.text);
      advance(j - i);
      out.push_back(std::move(t));
      continue;
    }

    if (c == '\'') {
      std::string s;
      size_t j = i + 1;
      bool closed = false;
      while (j < text.size()) {
        if (text[j] == '\'') {
          if (j + 1 < text.size() && text[j + 1] == '\'') {
            s.push_back('\'');
            j += 2;
            continue;
          }
          closed = true;
          ++j;
          break;
        }
        s.push_back(text[j]);
        ++j;
      }
      if (!closed)
        raise(ErrorCode::SyntaxError,
              std::to_string(line) + ":" + std::to_string(col) + ": unterminated string literal");
      t.kind = Token::Kind::String;
      t.text = std::move(s);
      advance(j - i);
      out.push_back(std::move(t));
      continue;
    }

    // Multi-char operators.
    static const char* two[] = {"<=", ">=", "<>", "!=", nullptr};
    bool matched = false;
    for (int k = 0; two[k]; ++k) {
      if (text.compare(i, 2, two[k]) == 0) {
        t.kind = Token::Kind::Punct;
        t.text = two[k];
        advance(2);
        out.push_back(std::move(t));
        matched = true;
        break;
      }
    }
    if (matched) continue;

    if (std::string("(),;*=<>+-/.").find(c) != std::string::npos) {
      t.kind = Token::Kind::Punct;
      t.text = std::string(1, c);
      advance(1);
      out.push_back(std::move(t));
      continue;
    }

    raise(ErrorCode::SyntaxError, std::to_string(line) + ":" + std::to_string(col) +
                                      ": unexpected character '" + std::string(1, c) + "'");
  }

  Token end;
  end.kind = Token::Kind::End;
  end.line = line;
  end.col = col;
  out.push_back(end);
  return out;
}

}  // namespace streamsql
