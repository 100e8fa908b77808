#include "skelrep/report.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "json.hpp"

namespace skelrep {

namespace {
using nlohmann::json;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string eval_report_to_json(const EvalReport& report) {
  json obj;
  obj["protocol"] = report.protocol;
  obj["accuracy"] = report.accuracy;
  obj["n_train"] = report.n_train;
  obj["n_test"] = report.n_test;
  json per_class = json::array();
  for (Eigen::Index c = 0; c < report.per_class.size(); ++c) per_class.push_back(report.per_class[c]);
  obj["per_class_accuracy"] = per_class;
  json confusion = json::array();
  for (Eigen::Index r = 0; r < report.confusion.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < report.confusion.cols(); ++c) row.push_back(report.confusion(r, c));
    confusion.push_back(row);
  }
  obj["confusion"] = confusion;
  obj["settings"] = report.settings;
  return obj.dump(2);
}

EvalReport parse_eval_report(const std::string& json_text) {
  json obj = json::parse(json_text);
  EvalReport r;
  r.protocol = obj.at("protocol").get<std::string>();
  r.accuracy = obj.at("accuracy").get<double>();
  r.n_train = obj.at("n_train").get<int>();
  r.n_test = obj.at("n_test").get<int>();
  const auto& pc = obj.at("per_class_accuracy");
  r.per_class.resize(static_cast<Eigen::Index>(pc.size()));
  for (std::size_t i = 0; i < pc.size(); ++i)
    r.per_class[static_cast<Eigen::Index>(i)] = pc[i].get<double>();
  const auto& cm = obj.at("confusion");
  const auto C = static_cast<Eigen::Index>(cm.size());
  r.confusion.resize(C, C);
  for (Eigen::Index i = 0; i < C; ++i)
    for (Eigen::Index j = 0; j < C; ++j)
      r.confusion(i, j) = cm[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<int>();
  if (obj.contains("settings"))
    r.settings = obj.at("settings").get<std::map<std::string, std::string>>();
  return r;
}

void write_eval_report_file(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) fail("cannot write report: " + path);
  out << eval_report_to_json(report) << "\n";
}

void write_confusion_grid(std::ostream& out, const EvalReport& report) {
  const Eigen::Index C = report.confusion.rows();
  out << "confusion matrix (" << report.protocol << "), rows = true class, cols = predicted\n";
  out << std::setw(6) << "";
  for (Eigen::Index c = 0; c < C; ++c) out << std::setw(6) << c;
  out << std::setw(10) << "acc" << "\n";
  for (Eigen::Index r = 0; r < C; ++r) {
    out << std::setw(6) << r;
    for (Eigen::Index c = 0; c < C; ++c) out << std::setw(6) << report.confusion(r, c);
    out << std::setw(10) << std::fixed << std::setprecision(3) << report.per_class[r];
    out.unsetf(std::ios::fixed);
    out << "\n";
  }
  out << "overall accuracy " << report.accuracy << " (" << report.confusion.trace() << "/"
      << report.n_test << ")\n";
}

void write_train_log_csv(std::ostream& out, const TrainLog& log) {
  out << "step,epoch,mse,r_skel,ssvi,wall_ms\n";
  for (const auto& r : log.records) {
    out << r.step << "," << r.epoch << "," << fmt17(r.mse) << ",";
    if (r.r_skel) out << fmt17(*r.r_skel);
    out << ",";
    if (r.ssvi) out << fmt17(*r.ssvi);
    out << "," << fmt17(r.wall_ms) << "\n";
  }
}

void write_train_log_file(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) fail("cannot write train log: " + path);
  write_train_log_csv(out, log);
}

std::string manifest_to_json(const CacheStats& stats, const DatasetSplit& split,
                             const std::string& source) {
  json obj;
  obj["source"] = source;
  obj["split_kind"] = split_kind_name(split.kind);
  obj["num_classes"] = stats.num_classes;
  obj["train_total"] = stats.train_total;
  obj["test_total"] = stats.test_total;
  obj["train_per_class"] = stats.train_per_class;
  obj["test_per_class"] = stats.test_per_class;
  if (!split.train.empty()) {
    obj["m"] = split.train.front().joints();
    obj["t"] = split.train.front().frames();
  }
  return obj.dump(2);
}

void write_manifest_file(const std::string& path, const CacheStats& stats,
                         const DatasetSplit& split, const std::string& source) {
  std::ofstream out(path);
  if (!out) fail("cannot write manifest: " + path);
  out << manifest_to_json(stats, split, source) << "\n";
}

}  // namespace skelrep
