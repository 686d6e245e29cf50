#pragma once

// CSV serialization with RFC 4180 quoting and LF records. Numbers are
// rendered with %.17g so identical inputs reproduce the file byte for byte.

#include <ostream>
#include <string>
#include <vector>

namespace linorbits {

std::string csv_number(double v);
std::string csv_quote(const std::string& cell);
void csv_row(std::ostream& os, const std::vector<std::string>& cells);

// Whole-document parser; doubled quotes and embedded separators honored.
std::vector<std::vector<std::string>> csv_parse(const std::string& text);

}  // namespace linorbits
