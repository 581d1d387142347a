#pragma once

#include "odebayes/experiments.hpp"

#include <iosfwd>
#include <string>

namespace odebayes {

/// Comma-separated text: a header line "t,y1,...,yd", then one row per design
/// point. Blank lines and lines starting with '#' are skipped. Errors carry
/// the source name and line number.
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset read_dataset_file(const std::string& path);

/// Writes with 17 significant digits so the text round-trips exactly.
void write_dataset(std::ostream& out, const Dataset& data);
void write_dataset_file(const std::string& path, const Dataset& data);

} // namespace odebayes
