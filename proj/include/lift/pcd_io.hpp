#ifndef LIFT_PCD_IO_HPP
#define LIFT_PCD_IO_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lift/types.hpp"

namespace lift {

/**
 * Reads consecutive little-endian float32 records of `stride` fields
 * (x, y, z, intensity[, ring]). The ring field is discarded. Records with a
 * non-finite x/y/z are dropped and counted in `dropped_non_finite`.
 *
 * Throws FormatError when the byte count is not a multiple of stride * 4 and
 * IoError when the file cannot be read.
 */
PointCloud read_binary_cloud(const std::filesystem::path& path, int stride);

/**
 * Reads one point per line from a text file. Lines may separate fields with
 * commas or whitespace; blank lines and lines starting with '#' are skipped;
 * fields beyond the fourth are ignored. A malformed line raises FormatError
 * naming its 1-based line number.
 */
PointCloud read_text_cloud(const std::filesystem::path& path);

/// Dispatches on extension: .txt/.csv/.xyz go to the text reader, anything
/// else to the binary reader with `stride`.
PointCloud read_cloud(const std::filesystem::path& path, int stride);

/// Writes `cloud` as float32 records with `stride` fields (ring written as 0).
void write_binary_cloud(const PointCloud& cloud,
                        const std::filesystem::path& path, int stride);

/// Name used in detection output for a class id.
std::string class_name(int class_id, int num_classes);

/// Orders boxes for output: descending score, then ascending (x, y, class_id).
std::vector<DetectionBox> sorted_for_output(std::span<const DetectionBox> boxes);

/// One JSON object per line, sorted with sorted_for_output.
std::string format_detections(std::span<const DetectionBox> boxes,
                              int num_classes);

void write_detections(std::span<const DetectionBox> boxes,
                      const std::filesystem::path& path, int num_classes = 10);

}  // namespace lift

#endif  // LIFT_PCD_IO_HPP
