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

#include "ltdr/csv.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

#include "ltdr/errors.hpp"

namespace ltdr {

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& os, std::initializer_list<std::string_view> header)
    : os_(os), columns_(header.size()) {
  for (auto h : header) cell(h);
  end_row();
}

CsvWriter::CsvWriter(std::ostream& os, const std::vector<std::string>& header)
    : os_(os), columns_(header.size()) {
  for (const auto& h : header) cell(h);
  end_row();
}

void CsvWriter::separator() {
  if (current_++) os_ << ',';
}

CsvWriter& CsvWriter::cell(std::string_view text) {
  separator();
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) {
    os_ << text;
    return *this;
  }
  os_ << '"';
  for (char ch : text) {
    if (ch == '"') os_ << '"';
    os_ << ch;
  }
  os_ << '"';
  return *this;
}

CsvWriter& CsvWriter::cell(double value) {
  separator();
  os_ << format_real(value);
  return *this;
}

CsvWriter& CsvWriter::cell(long long value) {
  separator();
  os_ << value;
  return *this;
}

void CsvWriter::end_row() {
  if (current_ != columns_) {
    throw ContractError("csv row has " + std::to_string(current_) + " cells, header has " +
                        std::to_string(columns_));
  }
  os_ << '\n';
  current_ = 0;
}

}  // namespace ltdr
