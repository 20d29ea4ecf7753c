#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "catreid/error.hpp"
#include "catreid/evaluator.hpp"
#include "support.hpp"

using namespace catreid::eval;

namespace {

struct Instance {
  Matrix embeddings;
  std::vector<std::string> entities;
  std::vector<std::string> ids;
};

Instance random_instance(catreid::Rng& rng, int max_items = 51) {
  Instance in;
  const int n = 2 + static_cast<int>(catreid::uniform_index(rng, max_items - 1));
  const int entities = 2 + static_cast<int>(catreid::uniform_index(rng, 7));
  const int dim = 2 + static_cast<int>(catreid::uniform_index(rng, 6));
  in.embeddings = test::random_matrix(n, dim, rng);
  for (int i = 0; i < n; ++i) {
    in.entities.push_back("e" + std::to_string(catreid::uniform_index(rng, entities)));
    in.ids.push_back("img" + std::to_string(1000 + i));
  }
  return in;
}

}  // namespace

TEST_CASE("average precision spot values") {
  const std::vector<int> ranking{10, 11, 12, 13, 14, 15};
  CHECK(average_precision(ranking, std::vector<int>{11, 14}) == 0.45);
  for (int r = 1; r <= 6; ++r) {
    CHECK(average_precision(ranking, std::vector<int>{ranking[r - 1]}) == 1.0 / r);
  }
  CHECK(average_precision(ranking, ranking) == 1.0);
  CHECK_THROWS_AS(average_precision(ranking, std::vector<int>{}), catreid::Error);
  CHECK_THROWS_AS(average_precision(ranking, std::vector<int>{99}), catreid::Error);
}

TEST_CASE("gallery ranking") {
  catreid::Rng rng(1);
  const Matrix gallery = test::random_matrix(12, 4, rng);
  const Vector query = gallery.row(7).transpose() * 3.0;
  CHECK(rank_gallery(query, gallery).front() == 7);
  CHECK(rank_gallery(query, gallery.topRows(1)) == std::vector<int>{0});
  const auto ranking = rank_gallery(query, gallery);
  const Matrix g = normalize_rows(gallery);
  const Vector q = query.normalized();
  std::vector<std::pair<double, int>> oracle;
  for (int i = 0; i < 12; ++i) oracle.emplace_back((g.row(i).transpose() - q).norm(), i);
  std::sort(oracle.begin(), oracle.end());
  for (int i = 0; i < 12; ++i) CHECK(ranking[i] == oracle[i].second);
  Matrix ties(3, 2);
  ties << 1, 0, 1, 0, 0, 1;
  CHECK(rank_gallery(Vector::Unit(2, 0), ties) == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(rank_gallery(Vector::Zero(4), gallery), catreid::Error);
}

TEST_CASE("metrics equal the brute-force evaluator on random instances") {
  catreid::Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto in = random_instance(rng);
    const auto report = evaluate_embeddings(in.embeddings, in.entities, in.ids);
    const auto oracle = test::brute_force_metrics(in.embeddings, in.entities);
    CHECK(report.valid_queries == oracle.valid);
    CHECK(report.skipped_queries == oracle.skipped);
    CHECK(std::abs(report.mAP - oracle.mAP) <= 1e-9);
    REQUIRE(report.cmc.size() == oracle.cmc.size());
    for (std::size_t k = 0; k < report.cmc.size(); ++k) CHECK(std::abs(report.cmc[k] - oracle.cmc[k]) <= 1e-9);
    CHECK(report.mAP >= 0.0);
    CHECK(report.mAP <= 1.0);
    for (std::size_t k = 1; k < report.cmc.size(); ++k) CHECK(report.cmc[k] >= report.cmc[k - 1]);
    if (report.valid_queries > 0) CHECK(report.rank1() == double(report.rank1_hits) / report.valid_queries);
    for (const auto& q : report.per_query) {
      CHECK(std::find(q.ranking.begin(), q.ranking.end(), q.query) == q.ranking.end());
    }
  }
}

TEST_CASE("one-hot entity embeddings score perfectly") {
  const std::vector<std::string> entities{"a", "a", "b", "b", "c", "c", "c"};
  Matrix e = Matrix::Zero(7, 3);
  const std::vector<int> col{0, 0, 1, 1, 2, 2, 2};
  std::vector<std::string> ids;
  for (int i = 0; i < 7; ++i) {
    e(i, col[i]) = 1.0;
    ids.push_back("id" + std::to_string(i));
  }
  const auto r = evaluate_embeddings(e, entities, ids);
  CHECK(r.mAP == 1.0);
  CHECK(r.rank1() == 1.0);
}

TEST_CASE("a singleton entity's query is skipped and counted") {
  const std::vector<std::string> entities{"a", "a", "b", "b", "solo"};
  catreid::Rng rng(3);
  const std::vector<std::string> ids{"1", "2", "3", "4", "5"};
  const auto r = evaluate_embeddings(test::random_matrix(5, 4, rng), entities, ids);
  CHECK(r.skipped_queries == 1);
  CHECK(r.valid_queries == 4);
  CHECK(r.per_query[r.index_of("5")].skipped);
  CHECK_THROWS_AS(evaluate_embeddings(Matrix(0, 4), {}, {}), catreid::Error);
}

TEST_CASE("permuting gallery storage leaves every metric bit-identical") {
  catreid::Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    auto in = random_instance(rng);
    // Duplicated rows create exact distance ties.
    if (in.embeddings.rows() > 3) in.embeddings.row(1) = in.embeddings.row(0);
    const auto base = evaluate_embeddings(in.embeddings, in.entities, in.ids);
    const int n = static_cast<int>(in.ids.size());
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    catreid::shuffle(perm, rng);
    Instance p;
    p.embeddings.resize(n, in.embeddings.cols());
    for (int i = 0; i < n; ++i) {
      p.embeddings.row(i) = in.embeddings.row(perm[i]);
      p.entities.push_back(in.entities[perm[i]]);
      p.ids.push_back(in.ids[perm[i]]);
    }
    const auto other = evaluate_embeddings(p.embeddings, p.entities, p.ids);
    CHECK(other.mAP == base.mAP);
    CHECK(other.cmc == base.cmc);
    CHECK(other.ids == base.ids);
    for (int q = 0; q < n; ++q) {
      CHECK(other.per_query[q].ranking == base.per_query[q].ranking);
      CHECK(other.per_query[q].distances == base.per_query[q].distances);
    }
  }
}

TEST_CASE("ranking sheets: query tile first, matches and mismatches labelled") {
  const std::vector<std::string> entities{"a", "a", "b", "b", "a", "b", "a", "b", "a"};
  Matrix e(9, 2);
  e << 1, 0, 0.99, 0.1, 0.95, 0.3, 0, 1, 0.9, 0.4, 0.1, 1, 0.8, 0.6, 0.2, 1, 0.7, 0.7;
  std::vector<std::string> ids;
  for (int i = 0; i < 9; ++i) ids.push_back("i" + std::to_string(i));
  const auto report = evaluate_embeddings(e, entities, ids);
  const int q = report.index_of("i0");
  const auto tiles = ranking_sheet_tiles(report, q, 7);
  REQUIRE(tiles.size() == 8);
  CHECK(tiles[0].role == TileRole::query);
  for (int j = 1; j < 8; ++j) {
    const bool match = report.entities[tiles[j].item] == report.entities[q];
    CHECK(tiles[j].role == (match ? TileRole::match : TileRole::mismatch));
  }
  CHECK(tiles[2].role == TileRole::mismatch);  // i2 (entity b) is second closest

  const auto dir = test::scratch_dir("eval_sheet");
  catreid::data::Dataset ds;
  ds.root = dir;
  for (int i = 0; i < 9; ++i) {
    catreid::data::ImageRecord r;
    r.id = ids[i];
    r.image_path = ids[i] + ".png";
    r.bbox = {0, 0, 20, 20};
    ds.records.push_back(r);
  }
  try {
    render_ranking_sheet(report, ds, q, 7);
    FAIL("expected an io error");
  } catch (const catreid::Error& e) {
    CHECK(e.kind() == catreid::ErrorKind::io);
    CHECK(std::string(e.what()).find("i0.png") != std::string::npos);
    CHECK(std::string(e.what()).find("i8.png") != std::string::npos);
  }
  for (int i = 0; i < 9; ++i) cv::imwrite((dir / (ids[i] + ".png")).string(), cv::Mat(20, 20, CV_8UC3, cv::Scalar(i * 20, 0, 0)));
  const cv::Mat sheet = render_ranking_sheet(report, ds, q, 7, 64);
  // query plus 7 results, 8 px gutters
  CHECK(sheet.cols == 8 * (64 + 8) + 8);
}

TEST_CASE("report JSON and rankings CSV") {
  catreid::Rng rng(5);
  const std::vector<std::string> entities{"a", "a", "b", "b"};
  const std::vector<std::string> ids{"w", "x", "y", "z"};
  const auto report = evaluate_embeddings(test::random_matrix(4, 3, rng), entities, ids);
  const auto doc = to_json(report);
  CHECK(doc["mAP"].get<double>() == report.mAP);
  CHECK(doc["cmc"].size() == 3);
  CHECK(doc["valid_queries"] == 4);
  CHECK(doc.contains("protocol"));
  const auto dir = test::scratch_dir("eval_csv");
  write_rankings_csv(report, dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "query_id,rank,gallery_id,distance,is_match");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 12);
}
