#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacmfer/data.hpp"
#include "lacmfer/model.hpp"

namespace lacmfer {

/// Fraction of eval samples where the dual-branch prediction matches the label.
inline double accuracy(const ModelParams& params, const Dataset& eval_ds) {
  if (eval_ds.samples.empty()) throw EmptyBatchError("accuracy: empty dataset");
  std::vector<int> pred = infer(params, eval_ds.feature_matrix());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == eval_ds.samples[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Cluster-quality measurements over a labelled feature set. Features are
/// L2-normalized per sample before anything is measured.
struct GeometryReport {
  double intra_l2 = 0.0;   // mean distance to the class centroid
  double intra_var = 0.0;  // mean per-dimension variance within classes
  double inter_l2 = 0.0;   // mean pairwise distance between class centroids
  double ratio_r = 0.0;    // inter_l2 / intra_l2; +inf when intra_l2 == 0
  std::string scope;
  int excluded_classes = 0;  // classes with < 2 samples, skipped in intra terms
};

inline nlohmann::json geometry_to_json(const GeometryReport& r) {
  nlohmann::json j = {{"intra_l2", r.intra_l2},
                      {"intra_var", r.intra_var},
                      {"inter_l2", r.inter_l2},
                      {"scope", r.scope},
                      {"excluded_classes", r.excluded_classes}};
  if (std::isinf(r.ratio_r))
    j["ratio_r"] = "inf";
  else
    j["ratio_r"] = r.ratio_r;
  return j;
}

inline GeometryReport geometry(const Tensor& features, const std::vector<int>& labels,
                               const std::string& scope) {
  if (features.rows() != labels.size())
    throw ShapeError("geometry: " + std::to_string(labels.size()) + " labels for " +
                     features.shape_str());
  std::size_t n = features.rows(), d = features.cols();

  Tensor f = features;
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += f.at(i, j) * f.at(i, j);
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (std::size_t j = 0; j < d; ++j) f.at(i, j) /= norm;
  }

  int max_label = -1;
  for (int y : labels) {
    if (y < 0) throw IndexError("geometry: negative label");
    max_label = std::max(max_label, y);
  }
  std::size_t num_classes = static_cast<std::size_t>(max_label) + 1;

  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);

  std::vector<std::vector<double>> centroids;
  GeometryReport rep;
  rep.scope = scope;
  double intra_sum = 0.0, var_sum = 0.0;
  int intra_classes = 0;
  int present = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (members[k].empty()) continue;
    ++present;
    std::vector<double> c(d, 0.0);
    for (std::size_t i : members[k])
      for (std::size_t j = 0; j < d; ++j) c[j] += f.at(i, j);
    for (double& v : c) v /= static_cast<double>(members[k].size());
    centroids.push_back(c);
    if (members[k].size() < 2) {
      ++rep.excluded_classes;
      continue;
    }
    double dist = 0.0;
    std::vector<double> var(d, 0.0);
    for (std::size_t i : members[k]) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double diff = f.at(i, j) - c[j];
        s += diff * diff;
        var[j] += diff * diff;
      }
      dist += std::sqrt(s);
    }
    intra_sum += dist / static_cast<double>(members[k].size());
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) v += var[j] / static_cast<double>(members[k].size());
    var_sum += v / static_cast<double>(d);
    ++intra_classes;
  }
  if (present < 2) throw ConfigError("geometry: need at least 2 classes present");

  rep.intra_l2 = intra_classes > 0 ? intra_sum / intra_classes : 0.0;
  rep.intra_var = intra_classes > 0 ? var_sum / intra_classes : 0.0;
  double inter_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centroids.size(); ++a)
    for (std::size_t b = a + 1; b < centroids.size(); ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double diff = centroids[a][j] - centroids[b][j];
        s += diff * diff;
      }
      inter_sum += std::sqrt(s);
      ++pairs;
    }
  rep.inter_l2 = inter_sum / static_cast<double>(pairs);
  rep.ratio_r = rep.intra_l2 > 0.0 ? rep.inter_l2 / rep.intra_l2
                                   : std::numeric_limits<double>::infinity();
  return rep;
}

/// Global-branch features of every sample, for geometry and export.
inline Tensor global_features(const ModelParams& params, const Tensor& x) {
  return forward(params, x).f_g;
}

/// Writes one CSV row per sample: label, domain_id, is_target, then the raw
/// global-branch feature vector.
inline void export_embeddings(const ModelParams& params, const std::vector<Dataset>& datasets,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write embeddings: " + path);
  std::size_t d = params.arch.global_hidden;
  out << "label,domain_id,is_target";
  for (std::size_t j = 1; j <= d; ++j) out << ",f_" << j;
  out << "\n";
  char buf[40];
  for (const Dataset& ds : datasets) {
    Tensor feats = global_features(params, ds.feature_matrix());
    for (std::size_t i = 0; i < feats.rows(); ++i) {
      out << ds.samples[i].label << "," << ds.domain_id << ","
          << (ds.role == Role::kTarget ? 1 : 0);
      for (std::size_t j = 0; j < d; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", feats.at(i, j));
        out << "," << buf;
      }
      out << "\n";
    }
  }
  if (!out) throw Error("failed writing embeddings: " + path);
}

}  // namespace lacmfer
