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

// Parses a ';'-separated list of statements. Errors raise EngineError with
// a "line:col: ..." SyntaxError message.
std::vector<StatementPtr> parse(const std::string& sql);

// Parses exactly one statement.
StatementPtr parse_one(const std::string& sql);

}  // namespace streamsql
