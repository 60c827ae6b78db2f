#pragma once

#include <string>
#include <vector>

#include "treemax/trainer.hpp"
#include "treemax/variance.hpp"

namespace treemax {

/// Deterministic double formatting ("%.12g") shared by every report writer,
/// so identical inputs give byte-identical files.
std::string format_double(double value);

/// Sweep CSV: fixed header, one row per report, trailing status comment.
extern const char* kSweepCsvHeader;

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& status);

/// Training CSV. include_timing appends a wall_ms column; it is off by
/// default so re-runs stay byte-identical.
std::string train_csv(const std::vector<TrainRecord>& records, const std::string& status,
                      bool include_timing = false, const std::vector<double>& wall_ms = {});

/// Log-scale line chart of normalized_variance and normalized_model per
/// regime. Pure string assembly; byte-stable for fixed input.
std::string sweep_svg(const std::vector<SweepRow>& rows);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace treemax
