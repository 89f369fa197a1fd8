#pragma once

#include "smarttmle/types.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace smarttmle {

/// One participant's time-ordered observed data. Visits 1..3 are gated by the
/// attendance indicators c1..c3; every field behind an indicator is present
/// exactly when that indicator is 1.
struct SubjectRecord {
  std::string id;
  Scalar w0 = 0.0;
  int y0 = 0;
  int a0 = 0;  // 0=control, 1=text, 2=webapp
  bool c1 = false;
  std::optional<Scalar> w1;
  std::optional<int> y1;
  std::optional<int> a1;  // 3 = eCoaching step-up
  bool c2 = false;
  std::optional<Scalar> w2;
  std::optional<int> y2;
  bool c3 = false;
  std::optional<int> y3;

  /// Cumulative outcome Y1+Y2+Y3; only defined for fully observed subjects.
  Scalar cumulative_outcome() const { return *y1 + *y2 + *y3; }
};

/// Step-up rule d: control never steps up; first-line arms step up to
/// eCoaching (3) exactly when behaviors did not improve (y1 >= y0, y1 != 0).
int evaluate_rule_d(int a0, int y0, int y1);

struct StepUpRule {};

struct Regime {
  enum class Label { I, II, IIA, III, IIIA };
  Label label;
  int stage0_arm;
  bool step_up;           // true: stage-1 policy is rule d; false: static
  int static_stage1_arm;  // meaningful when step_up == false

  /// Stage-1 arm this regime assigns given the observed interim outcomes.
  int stage1_arm(int y0, int y1) const {
    return step_up ? evaluate_rule_d(stage0_arm, y0, y1) : static_stage1_arm;
  }

  static Regime from_label(Label label);
  static Regime from_string(const std::string& name);
  const char* name() const;
};

/// Arm concordance with a regime through stage 0 or 1. Attendance is checked
/// separately by callers that combine this with censoring indicators.
bool follows_regime(const SubjectRecord& record, const Regime& regime, int through_stage);

struct DatasetOptions {
  bool coerce_monotone = false;  // zero out indicators after the first miss
  int max_count = 1000;          // ingestion cap on y values
};

class TrialDataset {
 public:
  TrialDataset() = default;
  explicit TrialDataset(std::vector<SubjectRecord> records, const DatasetOptions& opts = {});

  Index n() const { return static_cast<Index>(records_.size()); }
  const std::vector<SubjectRecord>& records() const { return records_; }
  const SubjectRecord& operator[](Index i) const { return records_[static_cast<size_t>(i)]; }

 private:
  std::vector<SubjectRecord> records_;
};

/// Exact column order of the CSV schema; absent values are empty strings.
extern const char* const kCsvHeader;

TrialDataset parse_dataset(std::istream& in, const DatasetOptions& opts = {});
TrialDataset parse_dataset_file(const std::string& path, const DatasetOptions& opts = {});
void serialize_dataset(const TrialDataset& data, std::ostream& out);

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smarttmle
