#include "catreid/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "catreid/checkpoint.hpp"
#include "catreid/error.hpp"
#include "catreid/pipeline.hpp"

namespace catreid::eval {
namespace {

double distance(const Matrix& m, Eigen::Index a, Eigen::Index b) {
  // Explicit loop so the value never depends on vectorisation or storage order.
  double sum = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double d = m(a, j) - m(b, j);
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace

Matrix normalize_rows(const Matrix& embeddings) {
  Matrix out = embeddings;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < out.cols(); ++j) sq += out(i, j) * out(i, j);
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw Error(ErrorKind::numeric, "embedding row " + std::to_string(i) + " has zero or non-finite norm");
    }
    out.row(i) /= norm;
  }
  return out;
}

std::vector<int> rank_gallery(const Vector& query, const Matrix& gallery) {
  if (gallery.rows() < 1) throw Error(ErrorKind::validation, "rank_gallery: empty gallery");
  if (gallery.cols() != query.size()) {
    throw Error(ErrorKind::validation, "rank_gallery: query and gallery dimensions differ");
  }
  Matrix all(gallery.rows() + 1, gallery.cols());
  all.row(0) = query.transpose();
  all.bottomRows(gallery.rows()) = gallery;
  const Matrix unit = normalize_rows(all);
  std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
  for (Eigen::Index g = 0; g < gallery.rows(); ++g) dist[g] = distance(unit, 0, g + 1);
  std::vector<int> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b]; });
  return order;
}

double average_precision(std::span<const int> ranking, std::span<const int> positives) {
  if (positives.empty()) throw Error(ErrorKind::validation, "average_precision: no positives");
  std::vector<char> is_positive;
  int max_index = 0;
  for (int r : ranking) max_index = std::max(max_index, r);
  is_positive.assign(static_cast<std::size_t>(max_index) + 1, 0);
  for (int p : positives) {
    if (p < 0 || p > max_index || std::find(ranking.begin(), ranking.end(), p) == ranking.end()) {
      throw Error(ErrorKind::validation, "average_precision: positive " + std::to_string(p) +
                                             " is not in the ranking");
    }
    is_positive[p] = 1;
  }
  int hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < ranking.size(); ++k) {
    if (is_positive[ranking[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(hits);
}

int EvalReport::index_of(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
}

EvalReport evaluate_embeddings(const Matrix& embeddings, std::span<const std::string> entities,
                               std::span<const std::string> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (n == 0) throw Error(ErrorKind::validation, "evaluate: empty test set");
  if (embeddings.rows() != n || static_cast<Eigen::Index>(entities.size()) != n) {
    throw Error(ErrorKind::validation, "evaluate: embeddings, entities and ids differ in length");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ids[a] != ids[b] ? ids[a] < ids[b] : entities[a] < entities[b];
  });
  Matrix sorted(n, embeddings.cols());
  EvalReport report;
  for (Eigen::Index i = 0; i < n; ++i) {
    sorted.row(i) = embeddings.row(order[i]);
    report.ids.push_back(ids[order[i]]);
    report.entities.push_back(entities[order[i]]);
  }
  const Matrix unit = normalize_rows(sorted);

  const int gallery_size = static_cast<int>(n) - 1;
  std::vector<int> hits_at(static_cast<std::size_t>(std::max(gallery_size, 0)), 0);
  double ap_sum = 0.0;
  report.num_queries = static_cast<int>(n);
  for (Eigen::Index q = 0; q < n; ++q) {
    QueryResult result;
    result.query = static_cast<int>(q);
    std::vector<int> items;
    std::vector<double> dist;
    for (Eigen::Index g = 0; g < n; ++g) {
      if (g == q) continue;
      items.push_back(static_cast<int>(g));
      dist.push_back(distance(unit, q, g));
    }
    std::vector<int> order_g(items.size());
    std::iota(order_g.begin(), order_g.end(), 0);
    std::stable_sort(order_g.begin(), order_g.end(),
                     [&](int a, int b) { return dist[a] < dist[b]; });
    std::vector<int> positives;
    for (std::size_t k = 0; k < order_g.size(); ++k) {
      const int item = items[order_g[k]];
      const bool match = report.entities[item] == report.entities[q];
      result.ranking.push_back(item);
      result.distances.push_back(dist[order_g[k]]);
      result.is_match.push_back(match);
      if (match) {
        positives.push_back(item);
        if (result.first_match_rank == 0) result.first_match_rank = static_cast<int>(k) + 1;
      }
    }
    if (positives.empty()) {
      result.skipped = true;
      ++report.skipped_queries;
    } else {
      result.average_precision = average_precision(result.ranking, positives);
      ap_sum += result.average_precision;
      ++report.valid_queries;
      ++hits_at[result.first_match_rank - 1];
      if (result.first_match_rank == 1) ++report.rank1_hits;
    }
    report.per_query.push_back(std::move(result));
  }
  if (report.valid_queries > 0) {
    report.mAP = ap_sum / report.valid_queries;
    int cumulative = 0;
    for (int h : hits_at) {
      cumulative += h;
      report.cmc.push_back(static_cast<double>(cumulative) / report.valid_queries);
    }
  } else {
    report.cmc.assign(hits_at.size(), 0.0);
  }
  return report;
}

Matrix embed_dataset(const data::Dataset& dataset, geometry::ImageSize size, const Forward& forward,
                     int batch_size, int working_max_side) {
  const auto n = static_cast<int>(dataset.records.size());
  Matrix out;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    std::vector<cv::Mat> views(static_cast<std::size_t>(count));
    std::vector<std::string> failures(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
      try {
        views[i] = pipeline::full_view(
            pipeline::load_working_image(dataset, static_cast<std::size_t>(start + i), working_max_side),
            size);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
    for (const auto& f : failures) {
      if (!f.empty()) throw Error(ErrorKind::io, f);
    }
    const nn::Tensor emb = forward(model::images_to_tensor(views, size));
    if (out.size() == 0) out.resize(n, emb.dim(1));
    for (int i = 0; i < count; ++i) {
      const auto row = emb.row(i);
      for (int j = 0; j < emb.dim(1); ++j) out(start + i, j) = row[j];
    }
  }
  return out;
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const data::Dataset& test_set,
                    int batch_size) {
  if (test_set.records.empty()) throw Error(ErrorKind::validation, "evaluate: empty test set");
  if (!test_set.has_entities()) throw Error(ErrorKind::validation, "evaluate: entities not derived");
  auto model = model::InferenceModel::from_checkpoint(checkpoint);
  const auto meta = model::Checkpoint::load(checkpoint, [](const std::string&) { return false; }).metadata;
  const int working = meta.value("working_max_side", pipeline::default_working_side(model.config()));
  const Matrix emb = embed_dataset(
      test_set, model.config().full_image,
      [&](const nn::Tensor& x) { return model.forward_infer(x); }, batch_size, working);
  std::vector<std::string> ids;
  for (const auto& r : test_set.records) ids.push_back(r.id);
  EvalReport report = evaluate_embeddings(emb, test_set.entity_of, ids);
  report.model_id = meta.value("model_id", checkpoint.filename().string());
  return report;
}

nlohmann::json to_json(const EvalReport& report, bool include_rankings) {
  nlohmann::json j;
  j["model_id"] = report.model_id;
  j["protocol"] = {{"metric", "euclidean-on-normalized"},
                   {"gallery", "leave-one-out"},
                   {"exclusions", "self-match"}};
  j["mAP"] = report.mAP;
  j["rank1"] = report.rank1();
  j["rank1_hits"] = report.rank1_hits;
  j["num_queries"] = report.num_queries;
  j["valid_queries"] = report.valid_queries;
  j["skipped_queries"] = report.skipped_queries;
  j["cmc"] = report.cmc;
  if (include_rankings) {
    j["per_query"] = nlohmann::json::array();
    for (const auto& q : report.per_query) {
      nlohmann::json row{{"query_id", report.ids[q.query]},
                         {"entity", report.entities[q.query]},
                         {"skipped", q.skipped},
                         {"average_precision", q.average_precision},
                         {"first_match_rank", q.first_match_rank}};
      nlohmann::json ranking = nlohmann::json::array();
      for (std::size_t k = 0; k < q.ranking.size(); ++k) {
        ranking.push_back({{"gallery_id", report.ids[q.ranking[k]]},
                           {"entity", report.entities[q.ranking[k]]},
                           {"distance", q.distances[k]}});
      }
      row["ranking"] = std::move(ranking);
      j["per_query"].push_back(std::move(row));
    }
  }
  return j;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << to_json(report).dump(2) << "\n";
}

void write_rankings_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << "query_id,rank,gallery_id,distance,is_match\n";
  char buf[64];
  for (const auto& q : report.per_query) {
    for (std::size_t k = 0; k < q.ranking.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", q.distances[k]);
      out << report.ids[q.query] << ',' << (k + 1) << ',' << report.ids[q.ranking[k]] << ',' << buf
          << ',' << (q.is_match[k] ? 1 : 0) << '\n';
    }
  }
}

std::vector<SheetTile> ranking_sheet_tiles(const EvalReport& report, int query, int k) {
  if (query < 0 || query >= static_cast<int>(report.per_query.size())) {
    throw Error(ErrorKind::validation, "ranking sheet: query index out of range");
  }
  const auto& q = report.per_query[query];
  if (k < 1 || k > static_cast<int>(q.ranking.size())) {
    throw Error(ErrorKind::validation, "ranking sheet: k must lie in [1, gallery size]");
  }
  std::vector<SheetTile> tiles{{q.query, TileRole::query, 0.0}};
  for (int i = 0; i < k; ++i) {
    tiles.push_back({q.ranking[i], q.is_match[i] ? TileRole::match : TileRole::mismatch, q.distances[i]});
  }
  return tiles;
}

cv::Mat render_ranking_sheet(const EvalReport& report, const data::Dataset& dataset, int query,
                             int k, int tile_size) {
  const auto tiles = ranking_sheet_tiles(report, query, k);
  std::vector<std::filesystem::path> paths;
  std::vector<std::size_t> records;
  std::vector<std::string> missing;
  for (const auto& t : tiles) {
    const auto& id = report.ids[t.item];
    const auto it = std::find_if(dataset.records.begin(), dataset.records.end(),
                                 [&](const data::ImageRecord& r) { return r.id == id; });
    if (it == dataset.records.end()) {
      missing.push_back(id + " (not in manifest)");
      records.push_back(0);
      continue;
    }
    records.push_back(static_cast<std::size_t>(it - dataset.records.begin()));
    const auto path = dataset.resolve(*it);
    if (!std::filesystem::exists(path)) missing.push_back(path.string());
  }
  if (!missing.empty()) {
    std::string message = "ranking sheet: missing images:";
    for (const auto& m : missing) message += " " + m;
    throw Error(ErrorKind::io, message);
  }

  const int border = 6;
  const int label = 22;
  const int gap = 8;
  const int n = static_cast<int>(tiles.size());
  cv::Mat sheet(tile_size + label + 2 * gap, n * (tile_size + gap) + gap, CV_8UC3,
                cv::Scalar(255, 255, 255));
  for (int i = 0; i < n; ++i) {
    const auto working = pipeline::load_working_image(dataset, records[i], 0);
    cv::Mat tile;
    cv::resize(working.image, tile, cv::Size(tile_size, tile_size), 0, 0, cv::INTER_AREA);
    const cv::Scalar colour = tiles[i].role == TileRole::query   ? cv::Scalar(200, 120, 0)
                              : tiles[i].role == TileRole::match ? cv::Scalar(0, 170, 0)
                                                                 : cv::Scalar(0, 0, 220);
    cv::rectangle(tile, cv::Rect(0, 0, tile_size, tile_size), colour, border);
    if (tiles[i].role == TileRole::mismatch) {
      // Cross in the top-right corner marks a wrong identity.
      const int s = tile_size / 5;
      const cv::Point a(tile_size - s - border, border), b(tile_size - border, border + s);
      cv::line(tile, a, b, colour, 3);
      cv::line(tile, {a.x, b.y}, {b.x, a.y}, colour, 3);
    }
    const int x = gap + i * (tile_size + gap);
    tile.copyTo(sheet(cv::Rect(x, gap, tile_size, tile_size)));
    std::string text = tiles[i].role == TileRole::query ? "query"
                                                        : "#" + std::to_string(i) +
                                                              (tiles[i].role == TileRole::match ? " match" : " miss");
    cv::putText(sheet, text, {x + 2, gap + tile_size + 16}, cv::FONT_HERSHEY_SIMPLEX, 0.45, colour, 1,
                cv::LINE_AA);
  }
  return sheet;
}

}  // namespace catreid::eval
