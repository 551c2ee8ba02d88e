#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gfp/metrics.hpp"

namespace gfp::report {

struct MethodResult {
  std::string method;
  metrics::ConfusionMatrix confusion;
};

struct NamedRatio {
  std::string features;
  metrics::FdRatio value;
};

// Fixed-precision number formatting shared by every CSV: %.6f, "nan", "inf".
std::string number(double v);

// method,accuracy,correct,total
std::string accuracy_csv(const std::vector<MethodResult>& results);
// class,precision,recall,support
std::string per_class_csv(const MethodResult& result, const std::vector<std::string>& classes);
// true\predicted header row of class names, one row per true class
std::string confusion_csv(const metrics::ConfusionMatrix& m, const std::vector<std::string>& classes);
// features,inter,intra,ratio
std::string fd_ratio_csv(const std::vector<NamedRatio>& ratios);

// Writes accuracy.csv, per_class_<method>.csv, confusion_<method>.csv and, when given,
// fd_ratio.csv into dir. Returns the written paths in that order.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const std::vector<MethodResult>& results,
                                                const std::vector<std::string>& classes,
                                                const std::vector<NamedRatio>& ratios = {});

}  // namespace gfp::report
