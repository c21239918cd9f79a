// Dataset CSV ingestion and export. Comma separated, header required, '.'
// decimal point; missing or non-numeric cells are rejected.
#pragma once

#include "drate/types.hpp"

#include <string>

namespace drate {

/// Every column other than `treatment` and `outcome` becomes a covariate,
/// in file order. Errors name the offending line and column.
Dataset parse_dataset_csv(const std::string& text, const std::string& treatment = "A",
                          const std::string& outcome = "Y");
Dataset read_dataset_csv(const std::string& path, const std::string& treatment = "A",
                         const std::string& outcome = "Y");

/// Covariates in order, then treatment and outcome; values printed with
/// round-trip precision.
std::string format_dataset_csv(const Dataset& data);
void write_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace drate
