// Copyright 2026 The LTDR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Plain CSV output: '\n' line endings, '.' decimal separator, and reals with
// 17 significant digits so every file is diffable and round-trips exactly.

#include <initializer_list>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ltdr {

// "%.17g", locale independent. Non-finite values print as nan, inf, -inf.
std::string format_real(double value);

class CsvWriter {
 public:
  CsvWriter(std::ostream& os, std::initializer_list<std::string_view> header);
  CsvWriter(std::ostream& os, const std::vector<std::string>& header);

  // Quoted when it holds a comma, quote or line break.
  CsvWriter& cell(std::string_view text);
  CsvWriter& cell(double value);
  CsvWriter& cell(long long value);
  CsvWriter& cell(int value) { return cell(static_cast<long long>(value)); }
  CsvWriter& cell(std::size_t value) { return cell(static_cast<long long>(value)); }
  // Ends the current row; throws ContractError on a column-count mismatch.
  void end_row();

 private:
  void separator();

  std::ostream& os_;
  std::size_t columns_;
  std::size_t current_ = 0;
};

}  // namespace ltdr
