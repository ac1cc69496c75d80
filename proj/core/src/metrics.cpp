#include "fedlips/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fedlips/error.hpp"

namespace fedlips::metrics {

double layer_cosine(std::span<const double> current, std::span<const double> reference) {
  if (current.size() != reference.size()) {
    throw ShapeError("layer_cosine: length " + std::to_string(current.size()) + " vs " +
                     std::to_string(reference.size()));
  }
  const double na = l2_norm(current), nb = l2_norm(reference);
  if (na == 0.0 || nb == 0.0) throw ArgumentError("layer_cosine: zero-norm vector");
  const double c = dot(current, reference) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw ArgumentError("accuracy: empty split");
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("accuracy: logits " + shape_to_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = logits.data() + i * c;
    const auto best = static_cast<int>(std::max_element(row, row + c) - row);
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const model::ModelParams& model, const data::Dataset& ds,
                         std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw ArgumentError("evaluate_accuracy: empty test split");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const data::Batch b = data::gather(ds, chunk);
    const Tensor logits = model::predict(model, b.inputs);
    correct += static_cast<std::size_t>(
        std::lround(accuracy_from_logits(logits, b.labels) * static_cast<double>(chunk.size())));
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

void record_round(MetricsLog& log, int round, std::span<const double> client_accuracies,
                  const model::ModelParams& global, const model::ModelParams* reference,
                  std::span<const std::vector<double>> client_grad_norms) {
  RoundRecord rec;
  rec.round = round;
  if (!client_accuracies.empty()) {
    rec.mean_accuracy = std::accumulate(client_accuracies.begin(), client_accuracies.end(), 0.0) /
                        static_cast<double>(client_accuracies.size());
  }
  const auto names = model::weight_layer_names(global);
  if (reference) {
    for (const auto& name : names) {
      rec.cosine.push_back({name, layer_cosine(model::layer_weight_vector(global, name),
                                               model::layer_weight_vector(*reference, name))});
    }
  }
  for (std::size_t l = 0; l < names.size(); ++l) {
    double sum = 0.0;
    for (const auto& norms : client_grad_norms) {
      if (norms.size() != names.size()) {
        throw ShapeError("record_round: client grad norms have " + std::to_string(norms.size()) +
                         " entries for " + std::to_string(names.size()) + " layers");
      }
      sum += norms[l];
    }
    const double mean =
        client_grad_norms.empty() ? 0.0 : sum / static_cast<double>(client_grad_norms.size());
    rec.grad_norm.push_back({names[l], mean});
  }
  log.rounds.push_back(std::move(rec));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing: " + path.string());
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path,
                                                std::string_view header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw DataError("unexpected header in " + path.string());
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw DataError("bad number '" + s + "' in " + path.string());
  }
  return v;
}

int parse_round(const std::string& s, const std::filesystem::path& path) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') {
    throw DataError("bad round '" + s + "' in " + path.string());
  }
  return static_cast<int>(v);
}

}  // namespace

void export_csv(const MetricsLog& log, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create directory " + directory.string() + ": " + ec.message());

  std::string acc = "round,mean_accuracy\n";
  std::string cos = "round,layer,cosine\n";
  std::string grad = "round,layer,mean_grad_norm\n";
  for (const auto& r : log.rounds) {
    const std::string round = std::to_string(r.round);
    acc += round + "," + format_double(r.mean_accuracy) + "\n";
    for (const auto& c : r.cosine) cos += round + "," + c.layer + "," + format_double(c.value) + "\n";
    for (const auto& g : r.grad_norm) {
      grad += round + "," + g.layer + "," + format_double(g.value) + "\n";
    }
  }
  write_file(directory / "accuracy.csv", acc);
  write_file(directory / "cosine.csv", cos);
  write_file(directory / "gradnorm.csv", grad);
}

MetricsLog load_csv(const std::filesystem::path& directory) {
  MetricsLog log;
  std::map<int, std::size_t> slot;
  const auto acc_path = directory / "accuracy.csv";
  for (const auto& row : read_rows(acc_path, "round,mean_accuracy")) {
    if (row.size() != 2) throw DataError("malformed row in " + acc_path.string());
    RoundRecord r;
    r.round = parse_round(row[0], acc_path);
    r.mean_accuracy = parse_double(row[1], acc_path);
    slot[r.round] = log.rounds.size();
    log.rounds.push_back(std::move(r));
  }
  auto load_layers = [&](const char* file, const char* header, auto member) {
    const auto path = directory / file;
    for (const auto& row : read_rows(path, header)) {
      if (row.size() != 3) throw DataError("malformed row in " + path.string());
      const auto it = slot.find(parse_round(row[0], path));
      if (it == slot.end()) throw DataError("round " + row[0] + " missing from accuracy.csv");
      (log.rounds[it->second].*member).push_back({row[1], parse_double(row[2], path)});
    }
  };
  load_layers("cosine.csv", "round,layer,cosine", &RoundRecord::cosine);
  load_layers("gradnorm.csv", "round,layer,mean_grad_norm", &RoundRecord::grad_norm);
  return log;
}

std::string summary_json(const MetricsLog& log) {
  nlohmann::ordered_json j;
  j["rounds"] = log.rounds.size();
  if (log.rounds.empty()) {
    j["final_round"] = nullptr;
    j["final_mean_accuracy"] = nullptr;
    j["final_cosine"] = nlohmann::ordered_json::object();
    j["final_grad_norm"] = nlohmann::ordered_json::object();
  } else {
    const RoundRecord& last = log.rounds.back();
    j["final_round"] = last.round;
    j["final_mean_accuracy"] = last.mean_accuracy;
    auto& cos = j["final_cosine"] = nlohmann::ordered_json::object();
    for (const auto& c : last.cosine) cos[c.layer] = c.value;
    auto& grad = j["final_grad_norm"] = nlohmann::ordered_json::object();
    for (const auto& g : last.grad_norm) grad[g.layer] = g.value;
  }
  return j.dump(2) + "\n";
}

}  // namespace fedlips::metrics
