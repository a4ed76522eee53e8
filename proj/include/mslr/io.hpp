#pragma once

#include <filesystem>
#include <string>

#include "mslr/geometry.hpp"
#include "mslr/training.hpp"

namespace mslr {

// xyz-ascii: optional "# label <int>" header, then "x y z" per line at 17
// significant digits. Blank lines and other '#' lines are skipped on read.
std::string format_xyz(const PointCloud& cloud);
PointCloud parse_xyz(const std::string& text);

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_xyz(const std::filesystem::path& path);

// step,epoch,lr,loss[,accuracy]; the accuracy column appears when any entry
// carries one.
std::string format_metrics_csv(const RunLog& log);
void write_metrics_csv(const std::filesystem::path& path, const RunLog& log);

// Atomic text write: temp file in the same directory, then rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// %.17g; round-trips exactly.
std::string format_double(double v);
// Shortest text that round-trips (0.6 rather than 0.59999999999999998).
std::string format_shortest(double v);

}  // namespace mslr
