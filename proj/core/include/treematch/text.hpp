#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace treematch {

// Lowercases and splits on anything that is not [a-z0-9]. Digits stay inside
// tokens ("type 2" -> {"type", "2"}).
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view text);

}  // namespace treematch
