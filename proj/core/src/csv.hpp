#pragma once

// Internal CSV plumbing shared by grid-io and the pipeline writers.

#include <string>
#include <string_view>
#include <vector>

namespace trendkit::csv {

/// Shortest round-trip decimal representation; NaN renders as the empty
/// field, which is the missing-value convention of every file format here.
std::string format_double(double v);

/// Parse a decimal field.  Empty -> NaN (and returns true).  Returns false
/// on malformed input.
bool parse_double(std::string_view field, double& out);

bool parse_int(std::string_view field, int& out);

/// Split one line on commas.  No quoting: none of the formats allows commas
/// inside fields.
std::vector<std::string_view> split(std::string_view line);

}  // namespace trendkit::csv
