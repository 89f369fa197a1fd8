#include "smarttmle/trial_data.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace smarttmle {

const char* const kCsvHeader = "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3";

int evaluate_rule_d(int a0, int y0, int y1) {
  if (a0 < 0 || a0 > 2) {
    throw std::invalid_argument("evaluate_rule_d: arm code must be 0, 1, or 2");
  }
  if (y0 < 0 || y1 < 0) {
    throw std::invalid_argument("evaluate_rule_d: counts must be nonnegative");
  }
  if (a0 == 0) return 0;
  if (y1 < y0 || y1 == 0) return a0;
  return 3;
}

Regime Regime::from_label(Label label) {
  switch (label) {
    case Label::I:
      return {label, 0, false, 0};
    case Label::II:
      return {label, 1, true, 0};
    case Label::IIA:
      return {label, 1, false, 1};
    case Label::III:
      return {label, 2, true, 0};
    case Label::IIIA:
      return {label, 2, false, 2};
  }
  throw std::invalid_argument("Regime::from_label: unknown label");
}

Regime Regime::from_string(const std::string& name) {
  if (name == "I" || name == "i") return from_label(Label::I);
  if (name == "II" || name == "ii") return from_label(Label::II);
  if (name == "IIA" || name == "iia") return from_label(Label::IIA);
  if (name == "III" || name == "iii") return from_label(Label::III);
  if (name == "IIIA" || name == "iiia") return from_label(Label::IIIA);
  throw std::invalid_argument("unknown regime label: " + name);
}

const char* Regime::name() const {
  switch (label) {
    case Label::I: return "I";
    case Label::II: return "II";
    case Label::IIA: return "IIA";
    case Label::III: return "III";
    case Label::IIIA: return "IIIA";
  }
  return "?";
}

bool follows_regime(const SubjectRecord& record, const Regime& regime, int through_stage) {
  if (record.a0 != regime.stage0_arm) return false;
  if (through_stage == 0) return true;
  if (!record.a1.has_value() || !record.y1.has_value()) return false;
  return *record.a1 == regime.stage1_arm(record.y0, *record.y1);
}

namespace {

void validate_record(const SubjectRecord& r, std::vector<std::string>& problems) {
  auto bad = [&](const std::string& what) { problems.push_back(r.id + ": " + what); };

  if (r.a0 < 0 || r.a0 > 2) bad("a0 out of {0,1,2}");
  if (r.c2 && !r.c1) bad("non-monotone missingness (c2=1, c1=0)");
  if (r.c3 && !r.c2) bad("non-monotone missingness (c3=1, c2=0)");

  if (r.c1 != (r.w1.has_value() && r.y1.has_value() && r.a1.has_value())) {
    bad("visit-1 fields present iff c1=1 violated");
  }
  if (r.c2 != (r.w2.has_value() && r.y2.has_value())) bad("visit-2 fields present iff c2=1 violated");
  if (r.c3 != r.y3.has_value()) bad("y3 present iff c3=1 violated");
  // Reject stray fields behind a 0 indicator outright.
  if (!r.c1 && (r.w1 || r.y1 || r.a1)) bad("visit-1 fields present with c1=0");
  if (!r.c2 && (r.w2 || r.y2)) bad("visit-2 fields present with c2=0");
  if (!r.c3 && r.y3) bad("y3 present with c3=0");

  if (r.c1 && r.a1) {
    const int a1 = *r.a1;
    if (r.a0 == 0 && a1 != 0) bad("a1 != 0 for control subject");
    if (r.a0 != 0) {
      const int y1 = r.y1.value_or(0);
      if (y1 < r.y0 || y1 == 0) {
        if (a1 != r.a0) bad("a1 changed for non-step-up-eligible subject");
      } else if (a1 != r.a0 && a1 != 3) {
        bad("a1 outside {a0, 3} for step-up-eligible subject");
      }
    }
  }
  if (r.y0 < 0 || (r.y1 && *r.y1 < 0) || (r.y2 && *r.y2 < 0) || (r.y3 && *r.y3 < 0)) {
    bad("negative count");
  }
}

void coerce_monotone(SubjectRecord& r) {
  if (!r.c1) {
    r.c2 = false;
    r.c3 = false;
    r.w1.reset();
    r.y1.reset();
    r.a1.reset();
  }
  if (!r.c2) {
    r.c3 = false;
    r.w2.reset();
    r.y2.reset();
  }
  if (!r.c3) r.y3.reset();
}

}  // namespace

TrialDataset::TrialDataset(std::vector<SubjectRecord> records, const DatasetOptions& opts)
    : records_(std::move(records)) {
  std::vector<std::string> problems;
  std::unordered_set<std::string> ids;
  for (auto& r : records_) {
    if (opts.coerce_monotone) coerce_monotone(r);
    if (!ids.insert(r.id).second) problems.push_back(r.id + ": duplicate id");
    const int cap = opts.max_count;
    if (r.y0 > cap || (r.y1 && *r.y1 > cap) || (r.y2 && *r.y2 > cap) || (r.y3 && *r.y3 > cap)) {
      problems.push_back(r.id + ": count exceeds ingestion cap " + std::to_string(cap));
    }
    validate_record(r, problems);
  }
  if (!problems.empty()) {
    std::string msg = "dataset validation failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

int parse_int_field(const std::string& s, int row, const char* name) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("row " + std::to_string(row) + ": bad integer for " + name + ": '" + s + "'");
  }
  return value;
}

Scalar parse_real_field(const std::string& s, int row, const char* name) {
  try {
    size_t pos = 0;
    const Scalar v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(row) + ": bad real for " + name + ": '" + s + "'");
  }
}

}  // namespace

TrialDataset parse_dataset(std::istream& in, const DatasetOptions& opts) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty input: missing header");
  {
    auto fields = split_csv_line(line);
    auto expected = split_csv_line(kCsvHeader);
    if (fields != expected) throw ParseError("header does not match schema '" + std::string(kCsvHeader) + "'");
  }

  std::vector<SubjectRecord> records;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 13) {
      throw ParseError("row " + std::to_string(row) + ": expected 13 fields, got " +
                       std::to_string(f.size()));
    }
    SubjectRecord r;
    r.id = f[0];
    r.w0 = parse_real_field(f[1], row, "w0");
    r.y0 = parse_int_field(f[2], row, "y0");
    r.a0 = parse_int_field(f[3], row, "a0");
    r.c1 = parse_int_field(f[4], row, "c1") != 0;
    if (!f[5].empty()) r.w1 = parse_real_field(f[5], row, "w1");
    if (!f[6].empty()) r.y1 = parse_int_field(f[6], row, "y1");
    if (!f[7].empty()) r.a1 = parse_int_field(f[7], row, "a1");
    r.c2 = parse_int_field(f[8], row, "c2") != 0;
    if (!f[9].empty()) r.w2 = parse_real_field(f[9], row, "w2");
    if (!f[10].empty()) r.y2 = parse_int_field(f[10], row, "y2");
    r.c3 = parse_int_field(f[11], row, "c3") != 0;
    if (!f[12].empty()) r.y3 = parse_int_field(f[12], row, "y3");
    records.push_back(std::move(r));
  }
  return TrialDataset(std::move(records), opts);
}

TrialDataset parse_dataset_file(const std::string& path, const DatasetOptions& opts) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  return parse_dataset(in, opts);
}

namespace {

std::string real_to_string(Scalar v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void serialize_dataset(const TrialDataset& data, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& r : data.records()) {
    out << r.id << ',' << real_to_string(r.w0) << ',' << r.y0 << ',' << r.a0 << ','
        << (r.c1 ? 1 : 0) << ',';
    if (r.w1) out << real_to_string(*r.w1);
    out << ',';
    if (r.y1) out << *r.y1;
    out << ',';
    if (r.a1) out << *r.a1;
    out << ',' << (r.c2 ? 1 : 0) << ',';
    if (r.w2) out << real_to_string(*r.w2);
    out << ',';
    if (r.y2) out << *r.y2;
    out << ',' << (r.c3 ? 1 : 0) << ',';
    if (r.y3) out << *r.y3;
    out << '\n';
  }
}

}  // namespace smarttmle
