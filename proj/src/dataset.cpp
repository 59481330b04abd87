// SPDX-License-Identifier: Apache-2.0
#include "fact/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fact/error.hpp"

namespace fact {

std::vector<int> LabeledDataset::classes() const {
  std::set<int> seen(labels.begin(), labels.end());
  return {seen.begin(), seen.end()};
}

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void LabeledDataset::validate() const {
  if (features.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "dataset has " + std::to_string(features.size()) + " rows but " +
                                                  std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim()) throw Error(ErrorCode::RaggedRows, "row " + std::to_string(i) + " has wrong width");
    if (!all_finite(features[i])) throw Error(ErrorCode::NonFiniteInput, "row " + std::to_string(i) + " is not finite");
    if (labels[i] < 0) throw Error(ErrorCode::InvalidParameter, "negative label at row " + std::to_string(i));
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.split = split;
  out.class_names = class_names;
  out.features.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw Error(ErrorCode::IndexOutOfRange, "subset index " + std::to_string(i));
    out.features.push_back(features[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

LabeledDataset LabeledDataset::filter_labels(int first, int last) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] >= first && labels[i] < last) keep.push_back(i);
  }
  return subset(keep);
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.split != b.split) throw Error(ErrorCode::InvalidParameter, "cannot concatenate train and test splits");
  if (!a.empty() && !b.empty() && a.dim() != b.dim()) throw Error(ErrorCode::DimensionMismatch, "feature widths differ");
  LabeledDataset out = a;
  if (out.class_names.size() < b.class_names.size()) out.class_names = b.class_names;
  out.features.insert(out.features.end(), b.features.begin(), b.features.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

std::pair<LabeledDataset, LabeledDataset> generate_gaussians(const GaussianSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 1 || spec.dim < 1 || spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw Error(ErrorCode::InvalidParameter, "gaussian generator counts must be >= 1");
  }
  if (!(spec.sigma >= 0.0) || !(spec.center_scale > 0.0)) {
    throw Error(ErrorCode::InvalidParameter, "sigma must be >= 0 and center_scale > 0");
  }
  Rng center_rng = Rng::derive(seed, 0);
  Rng train_rng = Rng::derive(seed, 1);
  Rng test_rng = Rng::derive(seed, 2);

  std::vector<Vec> centers;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    Vec v(spec.dim);
    for (double& x : v) x = center_rng.normal();
    v = l2_normalize(v);
    for (double& x : v) x *= spec.center_scale;
    centers.push_back(std::move(v));
  }

  auto fill = [&](LabeledDataset& ds, std::size_t per_class, Rng& rng) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      for (std::size_t k = 0; k < per_class; ++k) {
        Vec x = centers[c];
        for (double& v : x) v += spec.sigma * rng.normal();
        ds.features.push_back(std::move(x));
        ds.labels.push_back(static_cast<int>(c));
      }
    }
  };

  std::pair<LabeledDataset, LabeledDataset> out;
  out.first.split = Split::train;
  out.second.split = Split::test;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    out.first.class_names.push_back("c" + std::to_string(c));
  }
  out.second.class_names = out.first.class_names;
  fill(out.first, spec.train_per_class, train_rng);
  fill(out.second, spec.test_per_class, test_rng);
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

LabeledDataset parse_csv_with_vocab(const std::string& text, Split split, std::vector<std::string>& vocab) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));

  LabeledDataset ds;
  ds.split = split;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() < 2) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": need a label and at least one feature");
    }
    double probe = 0.0;
    if (first_content) {
      first_content = false;
      if (!parse_double(fields[1], probe)) continue;  // header row
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw Error(ErrorCode::RaggedRows, "line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                                             " columns, found " + std::to_string(fields.size()));
    }
    Vec x(width - 1);
    for (std::size_t c = 1; c < width; ++c) {
      if (!parse_double(fields[c], x[c - 1]) || !std::isfinite(x[c - 1])) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": bad numeric value '" + fields[c] + "'");
      }
    }
    auto [it, inserted] = index.emplace(fields[0], static_cast<int>(vocab.size()));
    if (inserted) vocab.push_back(fields[0]);
    ds.features.push_back(std::move(x));
    ds.labels.push_back(it->second);
  }
  if (ds.empty()) throw Error(ErrorCode::ParseError, "no data rows");
  ds.class_names = vocab;
  return ds;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

LabeledDataset parse_csv(const std::string& text, Split split) {
  std::vector<std::string> vocab;
  return parse_csv_with_vocab(text, split, vocab);
}

LabeledDataset load_csv(const std::filesystem::path& path, Split split) { return parse_csv(read_file(path), split); }

std::pair<LabeledDataset, LabeledDataset> load_csv_pair(const std::filesystem::path& train_path,
                                                         const std::filesystem::path& test_path) {
  std::vector<std::string> vocab;
  auto train = parse_csv_with_vocab(read_file(train_path), Split::train, vocab);
  auto test = parse_csv_with_vocab(read_file(test_path), Split::test, vocab);
  train.class_names = vocab;
  if (train.dim() != test.dim()) throw Error(ErrorCode::DimensionMismatch, "train and test feature widths differ");
  return {std::move(train), std::move(test)};
}

}  // namespace fact
