#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpcure/data_model.hpp"
#include "cpcure/inference.hpp"
#include "cpcure/simulation.hpp"

namespace cpcure {

// Column-role mapping for the two input CSVs. Covariate lists left empty are
// autodetected: every column that is not assigned another role becomes a
// covariate, in file order. Stable-group covariates default to the
// longitudinal ones. `arm` names an optional grouping column in the event
// file.
struct ColumnSchema {
  std::string subject_id = "subject_id";
  std::string visit_time = "visit_time";
  std::string outcome = "y";
  std::vector<std::string> long_covariates;
  std::vector<std::string> stable_long_covariates;
  std::string event_time = "event_time";
  std::string event_indicator = "event";
  std::vector<std::string> tte_covariates;
  std::string arm;
};

ColumnSchema schema_from_json(const nlohmann::json& j);
ColumnSchema schema_from_json_file(const std::string& path);

// Reads and validates the two CSVs into a dataset. Subjects appear in event
// file order; visits are sorted by time. Validation failures name the
// offending subject or file row. days_to_years divides all times by 365.25.
StudyDataset ingest_dataset(const std::string& long_path, const std::string& event_path,
                            const ColumnSchema& schema = {}, bool days_to_years = false);

// Same, but splits subjects by the value of the arm column (which must be
// assigned in the schema). Keys are the distinct arm labels.
std::map<std::string, StudyDataset> ingest_by_arm(const std::string& long_path,
                                                  const std::string& event_path,
                                                  const ColumnSchema& schema,
                                                  bool days_to_years = false);

// Writes a dataset back to the two-file CSV form with full double precision;
// ingest(serialize(data)) reproduces the dataset exactly. A nonempty
// arm_label adds a constant arm column to the event file.
void write_dataset_csv(const StudyDataset& data, const std::string& long_path,
                       const std::string& event_path, const std::string& arm_label = "");

nlohmann::json params_to_json(const ModelParameters& p);
ModelParameters params_from_json(const nlohmann::json& j);

nlohmann::json design_means_to_json(const DesignMeans& m);
DesignMeans design_means_from_json(const nlohmann::json& j);

// Config and result round trips. Every parser is strict: an unknown field
// fails with the offending key path, so a typo cannot silently fall back to
// a default value. Missing fields keep their defaults.
nlohmann::json fit_config_to_json(const FitConfig& c);
FitConfig fit_config_from_json(const nlohmann::json& j);

nlohmann::json sim_config_to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j);

nlohmann::json fit_result_to_json(const FitResult& r);
FitResult fit_result_from_json(const nlohmann::json& j);

nlohmann::json bootstrap_result_to_json(const BootstrapResult& b);
BootstrapResult bootstrap_result_from_json(const nlohmann::json& j);

// Minimal strict CSV support (no quoting; comma separator; header row).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};
CsvTable read_csv(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Full-precision formatting used for all numeric output, so that rerunning a
// command reproduces files byte for byte.
std::string format_double(double x);

}  // namespace cpcure
