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

namespace streamsql {

struct Token {
  enum class Kind { Ident, Number, String, TimeLabel, Punct, End };
  Kind kind = Kind::End;
  std::string text;   // identifiers keep their case; punct is the symbol
  std::string upper;  // uppercase text for keyword matching
  int line = 0;
  int col = 0;
};

// Tokenizes SQL text. Keywords are not distinguished from identifiers here;
// the parser matches on Token::upper. "--" comments are skipped. Bare
// HH:MM[:SS] sequences lex as TimeLabel tokens.
std::vector<Token> lex(const std::string& text);

}  // namespace streamsql
