// SPDX-License-Identifier: Apache-2.0
#include "fact/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "fact/error.hpp"

namespace fact {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::size_t line, const std::string& key, const std::string& value) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": bad value '" + value + "' for " + key);
}

template <typename T>
T parse_number(std::size_t line, const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(line, key, value);
  return out;
}

bool parse_bool(std::size_t line, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(line, key, value);
}

using Setter = std::function<void(RunConfig&, std::size_t line, const std::string& key, const std::string& value,
                                  const std::filesystem::path& base_dir)>;

template <typename T>
Setter number(T RunConfig::*field) {
  return [field](RunConfig& c, std::size_t line, const std::string& k, const std::string& v, const auto&) {
    c.*field = parse_number<T>(line, k, v);
  };
}

template <typename T, typename Fn>
Setter nested(Fn access) {
  return [access](RunConfig& c, std::size_t line, const std::string& k, const std::string& v, const auto&) {
    access(c) = parse_number<T>(line, k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", number(&RunConfig::seed)},
      {"data.source",
       [](RunConfig& c, std::size_t line, const std::string& k, const std::string& v, const auto&) {
         if (v == "synthetic") {
           c.source = DataSource::synthetic;
         } else if (v == "csv") {
           c.source = DataSource::csv;
         } else {
           bad_value(line, k, v);
         }
       }},
      {"data.classes", nested<std::size_t>([](RunConfig& c) -> auto& { return c.gaussian.num_classes; })},
      {"data.dim", nested<std::size_t>([](RunConfig& c) -> auto& { return c.gaussian.dim; })},
      {"data.train_per_class", nested<std::size_t>([](RunConfig& c) -> auto& { return c.gaussian.train_per_class; })},
      {"data.test_per_class", nested<std::size_t>([](RunConfig& c) -> auto& { return c.gaussian.test_per_class; })},
      {"data.center_scale", nested<double>([](RunConfig& c) -> auto& { return c.gaussian.center_scale; })},
      {"data.sigma", nested<double>([](RunConfig& c) -> auto& { return c.gaussian.sigma; })},
      {"data.train_path",
       [](RunConfig& c, std::size_t, const std::string&, const std::string& v, const std::filesystem::path& base) {
         c.train_csv = base.empty() ? std::filesystem::path(v) : base / v;
       }},
      {"data.test_path",
       [](RunConfig& c, std::size_t, const std::string&, const std::string& v, const std::filesystem::path& base) {
         c.test_csv = base.empty() ? std::filesystem::path(v) : base / v;
       }},
      {"train.epochs", nested<std::size_t>([](RunConfig& c) -> auto& { return c.train.epochs; })},
      {"train.batch_size", nested<std::size_t>([](RunConfig& c) -> auto& { return c.train.batch_size; })},
      {"train.lr", nested<double>([](RunConfig& c) -> auto& { return c.train.lr_init; })},
      {"train.momentum", nested<double>([](RunConfig& c) -> auto& { return c.train.momentum; })},
      {"train.mix_alpha", nested<double>([](RunConfig& c) -> auto& { return c.train.mix_alpha; })},
      {"train.forecast",
       [](RunConfig& c, std::size_t line, const std::string& k, const std::string& v, const auto&) {
         c.train.forecast = parse_bool(line, k, v);
       }},
      {"train.mid_dim", number(&RunConfig::mid_dim)},
      {"train.emb_dim", number(&RunConfig::embed_dim)},
      {"train.scale", number(&RunConfig::scale)},
      {"loss.gamma", nested<double>([](RunConfig& c) -> auto& { return c.train.loss.gamma; })},
      {"loss.virtual",
       [](RunConfig& c, std::size_t line, const std::string& k, const std::string& v, const auto&) {
         c.num_virtual = parse_number<std::size_t>(line, k, v);
       }},
      {"infer.eta", nested<double>([](RunConfig& c) -> auto& { return c.infer.eta; })},
      {"infer.tau", nested<double>([](RunConfig& c) -> auto& { return c.infer.tau; })},
      {"infer.prior",
       [](RunConfig& c, std::size_t line, const std::string& k, const std::string& v, const auto&) {
         if (v == "gaussian") {
           c.infer.prior = PriorMode::gaussian;
         } else if (v == "uniform") {
           c.infer.prior = PriorMode::uniform;
         } else {
           bad_value(line, k, v);
         }
       }},
      {"protocol.num_base", nested<std::size_t>([](RunConfig& c) -> auto& { return c.protocol.num_base; })},
      {"protocol.way", nested<std::size_t>([](RunConfig& c) -> auto& { return c.protocol.way; })},
      {"protocol.shot", nested<std::size_t>([](RunConfig& c) -> auto& { return c.protocol.shot; })},
      {"protocol.sessions", nested<std::size_t>([](RunConfig& c) -> auto& { return c.protocol.sessions; })},
      {"protocol.adapt_steps", nested<std::size_t>([](RunConfig& c) -> auto& { return c.adapt.steps; })},
      {"protocol.adapt_lr", nested<double>([](RunConfig& c) -> auto& { return c.adapt.lr; })},
      {"protocol.adapt_momentum", nested<double>([](RunConfig& c) -> auto& { return c.adapt.momentum; })},
      {"protocol.kd_lambda", nested<double>([](RunConfig& c) -> auto& { return c.adapt.lambda_kd; })},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  infer.validate();
  if (mid_dim < 1 || embed_dim < 1) throw Error(ErrorCode::InvalidParameter, "network dimensions must be >= 1");
  if (!(scale > 0.0)) throw Error(ErrorCode::InvalidParameter, "train.scale must be > 0");
  if (resolved_num_virtual() < 1) throw Error(ErrorCode::InvalidParameter, "loss.virtual must be >= 1");
  if (protocol.num_base < 2) throw Error(ErrorCode::InvalidParameter, "protocol.num_base must be >= 2");
  if (protocol.way < 1 || protocol.shot < 1) throw Error(ErrorCode::InvalidParameter, "way and shot must be >= 1");
  if (!(adapt.lr > 0.0) || !(adapt.momentum >= 0.0 && adapt.momentum < 1.0)) {
    throw Error(ErrorCode::InvalidParameter, "adaptation lr must be > 0 and momentum in [0, 1)");
  }
  if (!(adapt.lambda_kd >= 0.0 && adapt.lambda_kd <= 1.0)) {
    throw Error(ErrorCode::InvalidParameter, "protocol.kd_lambda must be in [0, 1]");
  }
  if (source == DataSource::csv && (train_csv.empty() || test_csv.empty())) {
    throw Error(ErrorCode::InvalidParameter, "csv source needs data.train_path and data.test_path");
  }
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(cfg, line_no, key, value, base_dir);
  }
  cfg.train.seed = cfg.seed;
  cfg.train.loss.num_base = cfg.protocol.num_base;
  cfg.train.loss.num_virtual = cfg.resolved_num_virtual();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_run_config(ss.str(), path.parent_path());
  if (cfg.source == DataSource::csv) {
    for (const auto& p : {cfg.train_csv, cfg.test_csv}) {
      if (!std::filesystem::exists(p)) throw Error(ErrorCode::IoError, "data file not found: " + p.string());
    }
  }
  return cfg;
}

std::string render_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "seed = " << c.seed << '\n';
  if (c.source == DataSource::synthetic) {
    out << "data.source = synthetic\n"
        << "data.classes = " << c.gaussian.num_classes << '\n'
        << "data.dim = " << c.gaussian.dim << '\n'
        << "data.train_per_class = " << c.gaussian.train_per_class << '\n'
        << "data.test_per_class = " << c.gaussian.test_per_class << '\n'
        << "data.center_scale = " << c.gaussian.center_scale << '\n'
        << "data.sigma = " << c.gaussian.sigma << '\n';
  } else {
    out << "data.source = csv\n"
        << "data.train_path = " << c.train_csv.string() << '\n'
        << "data.test_path = " << c.test_csv.string() << '\n';
  }
  out << "train.epochs = " << c.train.epochs << '\n'
      << "train.batch_size = " << c.train.batch_size << '\n'
      << "train.lr = " << c.train.lr_init << '\n'
      << "train.momentum = " << c.train.momentum << '\n'
      << "train.mix_alpha = " << c.train.mix_alpha << '\n'
      << "train.forecast = " << (c.train.forecast ? "true" : "false") << '\n'
      << "train.mid_dim = " << c.mid_dim << '\n'
      << "train.emb_dim = " << c.embed_dim << '\n'
      << "train.scale = " << c.scale << '\n'
      << "loss.gamma = " << c.train.loss.gamma << '\n'
      << "loss.virtual = " << c.resolved_num_virtual() << '\n'
      << "infer.eta = " << c.infer.eta << '\n'
      << "infer.tau = " << c.infer.tau << '\n'
      << "infer.prior = " << (c.infer.prior == PriorMode::gaussian ? "gaussian" : "uniform") << '\n'
      << "protocol.num_base = " << c.protocol.num_base << '\n'
      << "protocol.way = " << c.protocol.way << '\n'
      << "protocol.shot = " << c.protocol.shot << '\n'
      << "protocol.sessions = " << c.protocol.sessions << '\n'
      << "protocol.adapt_steps = " << c.adapt.steps << '\n'
      << "protocol.adapt_lr = " << c.adapt.lr << '\n'
      << "protocol.adapt_momentum = " << c.adapt.momentum << '\n'
      << "protocol.kd_lambda = " << c.adapt.lambda_kd << '\n';
  return out.str();
}

std::pair<LabeledDataset, LabeledDataset> load_datasets(const RunConfig& cfg) {
  if (cfg.source == DataSource::csv) return load_csv_pair(cfg.train_csv, cfg.test_csv);
  return generate_gaussians(cfg.gaussian, cfg.seed);
}

}  // namespace fact
