#include "gfp/report.hpp"

#include <cmath>
#include <cstdio>

#include "gfp/error.hpp"
#include "gfp/io.hpp"

namespace gfp::report {
namespace {

void check_classes(const metrics::ConfusionMatrix& m, const std::vector<std::string>& classes) {
  if (static_cast<int>(classes.size()) != m.num_classes())
    throw ArgumentError("class table has " + std::to_string(classes.size()) + " entries, confusion matrix " +
                        std::to_string(m.num_classes()));
}

}  // namespace

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string accuracy_csv(const std::vector<MethodResult>& results) {
  std::string out = "method,accuracy,correct,total\n";
  for (const auto& r : results)
    out += r.method + "," + number(r.confusion.accuracy()) + "," + std::to_string(r.confusion.trace()) + "," +
           std::to_string(r.confusion.total()) + "\n";
  return out;
}

std::string per_class_csv(const MethodResult& result, const std::vector<std::string>& classes) {
  check_classes(result.confusion, classes);
  std::string out = "class,precision,recall,support\n";
  for (int c = 0; c < result.confusion.num_classes(); ++c)
    out += classes[c] + "," + number(result.confusion.precision(c)) + "," + number(result.confusion.recall(c)) + "," +
           std::to_string(result.confusion.row_sum(c)) + "\n";
  return out;
}

std::string confusion_csv(const metrics::ConfusionMatrix& m, const std::vector<std::string>& classes) {
  check_classes(m, classes);
  std::string out = "true\\predicted";
  for (const auto& c : classes) out += "," + c;
  out += "\n";
  for (int i = 0; i < m.num_classes(); ++i) {
    out += classes[i];
    for (int j = 0; j < m.num_classes(); ++j) out += "," + std::to_string(m.at(i, j));
    out += "\n";
  }
  return out;
}

std::string fd_ratio_csv(const std::vector<NamedRatio>& ratios) {
  std::string out = "features,inter,intra,ratio\n";
  for (const auto& r : ratios)
    out += r.features + "," + number(r.value.inter) + "," + number(r.value.intra) + "," + number(r.value.ratio) + "\n";
  return out;
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const std::vector<MethodResult>& results,
                                                const std::vector<std::string>& classes,
                                                const std::vector<NamedRatio>& ratios) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::filesystem::path& p, const std::string& text) {
    io::write_file_atomic(p, text);
    written.push_back(p);
  };
  emit(dir / "accuracy.csv", accuracy_csv(results));
  for (const auto& r : results) emit(dir / ("per_class_" + r.method + ".csv"), per_class_csv(r, classes));
  for (const auto& r : results) emit(dir / ("confusion_" + r.method + ".csv"), confusion_csv(r.confusion, classes));
  if (!ratios.empty()) emit(dir / "fd_ratio.csv", fd_ratio_csv(ratios));
  return written;
}

}  // namespace gfp::report
