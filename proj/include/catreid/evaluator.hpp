#pragma once

// Leave-one-out retrieval evaluation over a test set: every image is a query
// against all the others, ranked by Euclidean distance between L2-normalised
// embeddings.

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "catreid/dataset.hpp"
#include "catreid/nn.hpp"
#include "catreid/part_geometry.hpp"

namespace catreid::eval {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rows scaled to unit length; throws Error(numeric) naming a zero-norm row.
Matrix normalize_rows(const Matrix& embeddings);

/// Gallery row indices by ascending distance to `query`, ties by ascending
/// index. Both sides are normalised here.
std::vector<int> rank_gallery(const Vector& query, const Matrix& gallery);

/// (1/|P|) * sum over positive hit positions k of hits(<=k)/k. `positives`
/// must be non-empty and name entries of `ranking`; throws Error(validation)
/// otherwise.
double average_precision(std::span<const int> ranking, std::span<const int> positives);

struct QueryResult {
  /// Index into the report's `ids`.
  int query = 0;
  /// Gallery items (indices into `ids`) best first, with their distances.
  std::vector<int> ranking;
  std::vector<double> distances;
  std::vector<bool> is_match;
  /// True when the query's entity has no other image.
  bool skipped = false;
  double average_precision = 0.0;
  /// 1-based rank of the first match, 0 when there is none.
  int first_match_rank = 0;
};

struct EvalReport {
  double mAP = 0.0;
  /// cmc[k-1] = fraction of valid queries with a match in the top k.
  std::vector<double> cmc;
  int num_queries = 0;
  int valid_queries = 0;
  int skipped_queries = 0;
  int rank1_hits = 0;
  /// Items in canonical order (sorted by id).
  std::vector<std::string> ids;
  std::vector<std::string> entities;
  std::vector<QueryResult> per_query;
  std::string model_id;

  double rank1() const { return cmc.empty() ? 0.0 : cmc.front(); }
  /// Position of `id` in `ids`, or -1.
  int index_of(const std::string& id) const;
};

/// Scores an embedding matrix (rows parallel to `entities` and `ids`). Items
/// are processed in id order so the result does not depend on storage order.
EvalReport evaluate_embeddings(const Matrix& embeddings, std::span<const std::string> entities,
                               std::span<const std::string> ids);

/// Runs `forward` over full-image views of every record, in batches.
using Forward = std::function<nn::Tensor(const nn::Tensor&)>;
Matrix embed_dataset(const data::Dataset& dataset, geometry::ImageSize size, const Forward& forward,
                     int batch_size = 32, int working_max_side = 0);

/// Loads the inference model from `checkpoint` and evaluates `test_set`
/// (entities must already be derived). Throws Error(validation) when empty.
EvalReport evaluate(const std::filesystem::path& checkpoint, const data::Dataset& test_set,
                    int batch_size = 32);

nlohmann::json to_json(const EvalReport& report, bool include_rankings = true);
void write_report(const EvalReport& report, const std::filesystem::path& path);
/// query_id,rank,gallery_id,distance,is_match
void write_rankings_csv(const EvalReport& report, const std::filesystem::path& path);

enum class TileRole { query, match, mismatch };

struct SheetTile {
  int item = 0;  // index into report ids
  TileRole role = TileRole::query;
  double distance = 0.0;
};

/// Query tile followed by the top-k gallery tiles.
std::vector<SheetTile> ranking_sheet_tiles(const EvalReport& report, int query, int k);

/// Renders the tiles as one row; images come from `dataset` records matched by
/// id. Throws Error(io) listing every missing image.
cv::Mat render_ranking_sheet(const EvalReport& report, const data::Dataset& dataset, int query,
                             int k, int tile_size = 128);

}  // namespace catreid::eval
