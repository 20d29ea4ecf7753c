#pragma once

// Helpers shared by the test binaries: scratch directories, random data and
// independent reference implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "catreid/dataset.hpp"
#include "catreid/network.hpp"
#include "catreid/random.hpp"

namespace test {

namespace fs = std::filesystem;

/// Fresh empty directory under the build tree's temp area.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("catreid_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, catreid::Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = scale * catreid::normal(rng);
  }
  return m;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-8, std::abs(analytic), std::abs(numeric)});
}

/// Small stream configuration that trains in seconds on a CPU.
inline catreid::model::StreamConfig tiny_stream(int entities) {
  catreid::model::StreamConfig c;
  c.full_backbone = "basic:8,16:1,1";
  c.partial_backbone = "basic:8,16:1,1";
  c.limb_embed_dim = 8;
  c.tail_embed_dim = 4;
  c.embed_dim = 40;
  c.num_entities = entities;
  c.full_image = {32, 32};
  c.trunk_image = {32, 16};
  c.limb_image = {16, 16};
  return c;
}

// ---- evaluation oracle: full distance matrix, metrics by definition ----

struct BruteForceMetrics {
  double mAP = 0.0;
  std::vector<double> cmc;
  int valid = 0;
  int skipped = 0;
};

inline BruteForceMetrics brute_force_metrics(const Eigen::MatrixXd& embeddings,
                                             const std::vector<std::string>& entities) {
  const int n = static_cast<int>(embeddings.rows());
  std::vector<Eigen::VectorXd> unit(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd r = embeddings.row(i).transpose();
    unit[i] = r / std::sqrt(r.dot(r));
  }
  std::vector<std::vector<double>> dist(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < unit[i].size(); ++k) {
        const double d = unit[i][k] - unit[j][k];
        s += d * d;
      }
      dist[i][j] = std::sqrt(s);
    }
  }
  BruteForceMetrics out;
  out.cmc.assign(std::max(0, n - 1), 0.0);
  double ap_sum = 0.0;
  for (int q = 0; q < n; ++q) {
    std::vector<int> gallery;
    for (int g = 0; g < n; ++g) {
      if (g != q) gallery.push_back(g);
    }
    int positives = 0;
    for (int g : gallery) positives += entities[g] == entities[q];
    if (positives == 0) {
      ++out.skipped;
      continue;
    }
    ++out.valid;
    // Insertion sort with the documented tie rule: distance, then original order.
    std::vector<int> order;
    for (int g : gallery) {
      auto it = order.begin();
      while (it != order.end() && (dist[q][*it] < dist[q][g] || (dist[q][*it] == dist[q][g] && *it < g))) ++it;
      order.insert(it, g);
    }
    double precision_sum = 0.0;
    int hits = 0;
    int first = -1;
    for (int k = 0; k < static_cast<int>(order.size()); ++k) {
      if (entities[order[k]] == entities[q]) {
        ++hits;
        precision_sum += static_cast<double>(hits) / (k + 1);
        if (first < 0) first = k;
      }
    }
    ap_sum += precision_sum / positives;
    for (int k = first; k < static_cast<int>(out.cmc.size()); ++k) out.cmc[k] += 1.0;
  }
  if (out.valid > 0) {
    out.mAP = ap_sum / out.valid;
    for (double& c : out.cmc) c /= out.valid;
  }
  return out;
}

// ---- triplet oracle: enumerate every (anchor, positive, negative) triple ----

inline double brute_force_triplet(const Eigen::MatrixXd& x, const std::vector<int>& labels, double margin) {
  const int n = static_cast<int>(x.rows());
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    double hardest_pos = -1.0;
    double hardest_neg = 1e300;
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      hardest_pos = std::max(hardest_pos, (x.row(a) - x.row(p)).norm());
    }
    for (int m = 0; m < n; ++m) {
      if (labels[m] == labels[a]) continue;
      hardest_neg = std::min(hardest_neg, (x.row(a) - x.row(m)).norm());
    }
    total += std::max(0.0, hardest_pos - hardest_neg + margin);
  }
  return total / n;
}

/// Random PK label vector (P entities, K each), shuffled.
inline std::vector<int> pk_labels(int P, int K, catreid::Rng& rng) {
  std::vector<int> labels;
  for (int p = 0; p < P; ++p) {
    for (int k = 0; k < K; ++k) labels.push_back(p);
  }
  catreid::shuffle(labels, rng);
  return labels;
}

// ---- partition oracle: distinct observed key tuples via std::set ----

inline std::size_t observed_tuples(const catreid::data::Dataset& ds, bool use_side, bool use_time) {
  std::set<std::tuple<std::string, int, int>> keys;
  for (const auto& r : ds.records) {
    keys.emplace(r.cat_id, use_side ? static_cast<int>(r.side) : -1,
                 use_time ? static_cast<int>(r.time_of_day) : -1);
  }
  return keys.size();
}

/// Records mirroring the test-cat structure: 4 cats with left and right
/// night images, one of them also seen on both sides by day.
inline catreid::data::Dataset test_cat_structure(int images_per_entity = 3) {
  using namespace catreid::data;
  Dataset ds;
  auto add = [&](const std::string& cat, Side side, TimeOfDay time) {
    for (int i = 0; i < images_per_entity; ++i) {
      ImageRecord r;
      r.cat_id = cat;
      r.side = side;
      r.time_of_day = time;
      r.id = cat + "_" + to_string(side) + "_" + to_string(time) + "_" + std::to_string(i);
      r.image_path = r.id + ".png";
      r.bbox = {0, 0, 10, 10};
      ds.records.push_back(r);
    }
  };
  for (int c = 0; c < 4; ++c) {
    const std::string cat = "cat" + std::to_string(c);
    add(cat, Side::left, TimeOfDay::night);
    add(cat, Side::right, TimeOfDay::night);
    if (c == 0) {
      add(cat, Side::left, TimeOfDay::day);
      add(cat, Side::right, TimeOfDay::day);
    }
  }
  return ds;
}

}  // namespace test
