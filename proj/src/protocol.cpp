// SPDX-License-Identifier: Apache-2.0
#include "fact/protocol.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "fact/error.hpp"
#include "fact/losses.hpp"

namespace fact {

namespace {

constexpr std::uint64_t kClassOrderStream = 0xC1A55;
constexpr std::uint64_t kShotStreamBase = 0x5407'0000;

void require_coverage(const SessionState& state, std::size_t num_classes, std::size_t b) {
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (state.head_index(static_cast<int>(c)) < 0) {
      throw Error(ErrorCode::CoverageMismatch,
                  "session " + std::to_string(b) + ": class " + std::to_string(c) + " has no prototype");
    }
  }
}

std::string format_percent(std::optional<double> fraction) {
  if (!fraction) return "na";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << *fraction * 100.0;
  return ss.str();
}

std::optional<double> parse_percent(const std::string& s) {
  if (s == "na") return std::nullopt;
  try {
    return std::stod(s) / 100.0;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad percentage '" + s + "'");
  }
}

std::map<std::string, std::string> parse_fields(const std::string& line) {
  std::map<std::string, std::string> fields;
  std::istringstream in(line);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "expected key=value, got '" + token + "'");
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return fields;
}

}  // namespace

LabeledDataset SessionStream::cumulative_test(std::size_t b) const {
  if (b > sessions.size()) throw Error(ErrorCode::IndexOutOfRange, "session " + std::to_string(b) + " does not exist");
  LabeledDataset out = base_test;
  for (std::size_t s = 0; s < b; ++s) out = concat(out, sessions[s].test);
  return out;
}

SessionStream build_stream(const LabeledDataset& train, const LabeledDataset& test, const StreamSpec& spec,
                           std::uint64_t seed) {
  if (spec.num_base < 1 || spec.way < 1 || spec.shot < 1) {
    throw Error(ErrorCode::InvalidParameter, "num_base, way and shot must be >= 1");
  }
  train.validate();
  test.validate();
  std::vector<int> classes = train.classes();
  const std::size_t needed = spec.num_base + spec.way * spec.sessions;
  if (classes.size() < needed) {
    throw Error(ErrorCode::InsufficientClasses, "need " + std::to_string(needed) + " classes, dataset has " +
                                                    std::to_string(classes.size()));
  }

  Rng order_rng = Rng::derive(seed, kClassOrderStream);
  std::vector<std::size_t> perm = random_permutation(classes.size(), order_rng);

  SessionStream stream;
  stream.num_base = spec.num_base;
  stream.way = spec.way;
  stream.shot = spec.shot;
  std::map<int, int> relabel;
  for (std::size_t k = 0; k < needed; ++k) {
    stream.class_order.push_back(classes[perm[k]]);
    relabel.emplace(classes[perm[k]], static_cast<int>(k));
  }

  std::vector<std::string> names(needed);
  for (std::size_t k = 0; k < needed; ++k) {
    const auto orig = static_cast<std::size_t>(stream.class_order[k]);
    names[k] = orig < train.class_names.size() ? train.class_names[orig] : std::to_string(orig);
  }

  auto project = [&](const LabeledDataset& src, const std::vector<std::size_t>& rows) {
    LabeledDataset out = src.subset(rows);
    for (int& y : out.labels) y = relabel.at(y);
    out.class_names = names;
    return out;
  };
  auto rows_of = [&](const LabeledDataset& src, int stream_first, int stream_last) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto it = relabel.find(src.labels[i]);
      if (it != relabel.end() && it->second >= stream_first && it->second < stream_last) rows.push_back(i);
    }
    return rows;
  };

  const int nb = static_cast<int>(spec.num_base);
  stream.base_train = project(train, rows_of(train, 0, nb));
  stream.base_test = project(test, rows_of(test, 0, nb));
  if (stream.base_test.empty()) throw Error(ErrorCode::EmptyClass, "base session has no test instances");

  for (std::size_t b = 1; b <= spec.sessions; ++b) {
    const int first = nb + static_cast<int>((b - 1) * spec.way);
    const int last = first + static_cast<int>(spec.way);
    std::vector<std::size_t> shots;
    for (int c = first; c < last; ++c) {
      std::vector<std::size_t> rows = rows_of(train, c, c + 1);
      if (rows.size() < spec.shot) {
        throw Error(ErrorCode::InsufficientShots, "class " + names[static_cast<std::size_t>(c)] + " has " +
                                                      std::to_string(rows.size()) + " training instances, need " +
                                                      std::to_string(spec.shot));
      }
      Rng shot_rng = Rng::derive(seed, kShotStreamBase + static_cast<std::uint64_t>(c));
      shuffle_indices(rows, shot_rng);
      rows.resize(spec.shot);
      std::sort(rows.begin(), rows.end());
      shots.insert(shots.end(), rows.begin(), rows.end());
    }
    SessionSplit split{project(train, shots), project(test, rows_of(test, first, last))};
    if (split.test.empty()) {
      throw Error(ErrorCode::EmptyClass, "session " + std::to_string(b) + " has no test instances");
    }
    stream.sessions.push_back(std::move(split));
  }
  return stream;
}

Predictor make_predictor(const SessionState& state, InferMode mode, const InferConfig& cfg) {
  cfg.validate();
  if (mode == InferMode::fact) {
    return [&state, cfg](std::span<const double> x) { return argmax(infer_fact(state, cfg, x)); };
  }
  return [&state, tau = cfg.tau](std::span<const double> x) { return argmax(infer_protonet(state, x, tau)); };
}

AccuracySplit split_accuracy(const SessionState& state, const Predictor& predict, const LabeledDataset& data,
                             std::size_t num_base) {
  std::size_t hits = 0, base_hits = 0, base_total = 0, novel_hits = 0, novel_total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t k = predict(data.features[i]);
    const bool hit = state.registry.at(k) == data.labels[i];
    hits += hit;
    if (static_cast<std::size_t>(data.labels[i]) < num_base) {
      ++base_total;
      base_hits += hit;
    } else {
      ++novel_total;
      novel_hits += hit;
    }
  }
  AccuracySplit out;
  if (!data.empty()) out.all = static_cast<double>(hits) / static_cast<double>(data.size());
  if (base_total > 0) out.base = static_cast<double>(base_hits) / static_cast<double>(base_total);
  if (novel_total > 0) out.novel = static_cast<double>(novel_hits) / static_cast<double>(novel_total);
  return out;
}

double evaluate_session(const SessionState& state, const SessionStream& stream, std::size_t b, InferMode mode,
                        const InferConfig& cfg) {
  require_coverage(state, stream.classes_through(b), b);
  const LabeledDataset test = stream.cumulative_test(b);
  return split_accuracy(state, make_predictor(state, mode, cfg), test, stream.num_base).all;
}

double performance_drop(std::span<const double> acc) {
  if (acc.empty()) throw Error(ErrorCode::EmptySequence, "performance_drop of an empty sequence");
  return acc.front() - acc.back();
}

double harmonic_mean(double base_acc, double new_acc) {
  const double s = base_acc + new_acc;
  return s == 0.0 ? 0.0 : 2.0 * base_acc * new_acc / s;
}

std::vector<std::vector<std::size_t>> assignment_matrix(const SessionState& state, const LabeledDataset& base_train) {
  const std::size_t num_base = state.head.num_base;
  const std::size_t v = state.head.num_virtual();
  if (v < 1) throw Error(ErrorCode::NoVirtualPrototypes, "assignment matrix needs virtual prototypes");
  std::vector<std::vector<std::size_t>> counts(num_base, std::vector<std::size_t>(v, 0));
  const LossConfig lc{0.0, v, state.head.num_known()};
  for (std::size_t i = 0; i < base_train.size(); ++i) {
    const int y = base_train.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_base) {
      throw Error(ErrorCode::CoverageMismatch, "row " + std::to_string(i) + " is not a base class");
    }
    const Vec logits = cosine_logits(state.head, embed(state.net, base_train.features[i]));
    const std::size_t y_hat = pseudo_virtual_label(logits, lc);
    ++counts[static_cast<std::size_t>(y)][y_hat - state.head.num_known()];
  }
  return counts;
}

std::vector<double> SessionMetrics::accuracies() const {
  std::vector<double> out;
  for (const auto& r : sessions) out.push_back(r.acc);
  return out;
}

Method parse_method(const std::string& name) {
  if (name == "fact") return Method::fact;
  if (name == "protonet") return Method::protonet;
  if (name == "finetune") return Method::finetune;
  if (name == "kd") return Method::kd;
  throw Error(ErrorCode::Usage, "unknown method '" + name + "' (expected fact, protonet, finetune or kd)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::fact: return "fact";
    case Method::protonet: return "protonet";
    case Method::finetune: return "finetune";
    case Method::kd: return "kd";
  }
  return "unknown";
}

SessionMetrics run_sessions(const SessionState& base_state, const SessionStream& stream, Method method,
                            const InferConfig& infer, const AdaptConfig& adapt) {
  infer.validate();
  const InferMode mode = method == Method::fact ? InferMode::fact : InferMode::protonet;
  SessionMetrics metrics;
  metrics.method = to_string(method);
  metrics.assignment = assignment_matrix(base_state, stream.base_train);

  SessionState state = base_state;
  for (std::size_t b = 0; b <= stream.num_sessions(); ++b) {
    if (b > 0) {
      const LabeledDataset& train = stream.sessions[b - 1].train;
      state = expand_head(std::move(state), class_prototypes(state.net, train));
      if (method == Method::finetune) state = finetune_session(std::move(state), train, adapt);
      if (method == Method::kd) state = kd_session(std::move(state), train, adapt);
      state.session_index = b;
    }
    require_coverage(state, stream.classes_through(b), b);
    const AccuracySplit acc =
        split_accuracy(state, make_predictor(state, mode, infer), stream.cumulative_test(b), stream.num_base);
    SessionRecord rec{b, acc.all, acc.base, acc.novel, std::nullopt};
    if (acc.novel) rec.hmean = harmonic_mean(acc.base, *acc.novel);
    metrics.sessions.push_back(rec);
  }
  const auto accs = metrics.accuracies();
  metrics.pd = performance_drop(accs);
  return metrics;
}

void write_run_report(std::ostream& out, const SessionMetrics& metrics) {
  out << "method=" << metrics.method << '\n';
  for (const auto& r : metrics.sessions) {
    out << "session=" << r.session << " acc=" << format_percent(r.acc) << " base_acc=" << format_percent(r.base_acc)
        << " new_acc=" << format_percent(r.new_acc) << " hmean=" << format_percent(r.hmean) << '\n';
  }
  out << "pd=" << format_percent(metrics.pd) << '\n';
}

SessionMetrics read_run_report(std::istream& in) {
  SessionMetrics metrics;
  std::string line;
  bool saw_pd = false;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    auto fields = parse_fields(line);
    if (fields.count("method")) {
      metrics.method = fields["method"];
    } else if (fields.count("session")) {
      for (const char* key : {"acc", "base_acc", "new_acc", "hmean"}) {
        if (!fields.count(key)) throw Error(ErrorCode::ParseError, std::string("session record lacks ") + key);
      }
      SessionRecord r;
      r.session = std::stoul(fields["session"]);
      r.acc = parse_percent(fields["acc"]).value_or(0.0);
      r.base_acc = parse_percent(fields["base_acc"]).value_or(0.0);
      r.new_acc = parse_percent(fields["new_acc"]);
      r.hmean = parse_percent(fields["hmean"]);
      metrics.sessions.push_back(r);
    } else if (fields.count("pd")) {
      metrics.pd = parse_percent(fields["pd"]).value_or(0.0);
      saw_pd = true;
    } else {
      throw Error(ErrorCode::ParseError, "unrecognized report line: " + line);
    }
  }
  if (metrics.sessions.empty() || !saw_pd) throw Error(ErrorCode::ParseError, "report has no session or pd records");
  return metrics;
}

}  // namespace fact
