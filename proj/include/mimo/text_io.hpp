#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mimo {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::string_view trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

}  // namespace mimo
