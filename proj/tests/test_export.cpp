#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "catreid/embedding_export.hpp"
#include "catreid/error.hpp"
#include "support.hpp"

using namespace catreid::exporter;

namespace {

EmbeddingTable table_of(const Eigen::MatrixXd& v) {
  EmbeddingTable t;
  t.vectors = v;
  for (int i = 0; i < v.rows(); ++i) {
    t.ids.push_back("r" + std::to_string(i));
    t.cat_ids.push_back("cat" + std::to_string(i % 3));
    t.entity_ids.push_back(t.cat_ids.back() + (i % 2 ? "/left/night" : "/right/night"));
  }
  return t;
}

Eigen::MatrixXd random_rotation(int n, catreid::Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(test::random_matrix(n, n, rng));
  return qr.householderQ();
}

}  // namespace

TEST_CASE("embedding CSV round-trips exactly, including awkward ids") {
  catreid::Rng rng(1);
  auto t = table_of(test::random_matrix(6, 5, rng, 1e3));
  t.ids[2] = "with,comma";
  t.ids[3] = "with \"quotes\"";
  std::stringstream s;
  write_embeddings_csv(t, s);
  const auto back = read_embeddings_csv(s);
  CHECK(back.ids == t.ids);
  CHECK(back.cat_ids == t.cat_ids);
  CHECK(back.entity_ids == t.entity_ids);
  CHECK(back.vectors == t.vectors);
}

TEST_CASE("an empty table writes a header-only file") {
  EmbeddingTable t;
  t.vectors.resize(0, 4);
  std::stringstream s;
  write_embeddings_csv(t, s);
  CHECK(s.str() == "id,cat_id,entity_id,e0,e1,e2,e3\n");
  const auto back = read_embeddings_csv(s);
  CHECK(back.size() == 0);
  CHECK(back.vectors.cols() == 4);
}

TEST_CASE("malformed embedding CSVs are rejected") {
  std::stringstream bad_header("name,x\n");
  CHECK_THROWS_AS(read_embeddings_csv(bad_header), catreid::Error);
  std::stringstream short_row("id,cat_id,entity_id,e0,e1\na,b,c,1\n");
  CHECK_THROWS_AS(read_embeddings_csv(short_row), catreid::Error);
  std::stringstream not_number("id,cat_id,entity_id,e0\na,b,c,one\n");
  CHECK_THROWS_AS(read_embeddings_csv(not_number), catreid::Error);
}

TEST_CASE("projected variance equals the sum of the top two covariance eigenvalues") {
  catreid::Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd v = test::random_matrix(20, 8, rng);
    v.col(0) *= 4.0;
    v.col(3) *= 2.5;
    const auto p = project_linear(table_of(v));
    const Eigen::MatrixXd centred = v.rowwise() - v.colwise().mean();
    const Eigen::MatrixXd cov = centred.transpose() * centred / 19.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double top2 = eig.eigenvalues()(7) + eig.eigenvalues()(6);
    const Eigen::MatrixX2d pc = p.xy.rowwise() - p.xy.colwise().mean();
    const double projected = (pc.array().square().sum()) / 19.0;
    CHECK(projected == doctest::Approx(top2).epsilon(1e-6));
    CHECK(p.warnings.empty());
  }
}

TEST_CASE("points on a plane keep all pairwise distances") {
  catreid::Rng rng(3);
  const Eigen::MatrixXd plane = test::random_matrix(15, 2, rng, 5.0);
  const Eigen::MatrixXd basis = random_rotation(10, rng).leftCols(2);
  Eigen::MatrixXd v = plane * basis.transpose();
  v.rowwise() += test::random_matrix(1, 10, rng).row(0);
  const auto p = project_linear(table_of(v));
  for (int i = 0; i < 15; ++i) {
    for (int j = 0; j < 15; ++j) {
      CHECK(std::abs((p.xy.row(i) - p.xy.row(j)).norm() - (v.row(i) - v.row(j)).norm()) < 1e-6);
    }
  }
}

TEST_CASE("projection is translation invariant and rotation equivariant up to axis sign") {
  catreid::Rng rng(4);
  Eigen::MatrixXd v = test::random_matrix(25, 6, rng);
  v.col(1) *= 3.0;
  v.col(4) *= 2.0;
  const auto base = project_linear(table_of(v));
  Eigen::MatrixXd shifted = v;
  shifted.rowwise() += test::random_matrix(1, 6, rng, 10.0).row(0);
  CHECK((project_linear(table_of(shifted)).xy - base.xy).cwiseAbs().maxCoeff() < 1e-9);
  const Eigen::MatrixXd q = random_rotation(6, rng);
  const auto rotated = project_linear(table_of(v * q.transpose()));
  for (int c = 0; c < 2; ++c) {
    const double same = (rotated.xy.col(c) - base.xy.col(c)).cwiseAbs().maxCoeff();
    const double flipped = (rotated.xy.col(c) + base.xy.col(c)).cwiseAbs().maxCoeff();
    CHECK(std::min(same, flipped) < 1e-9);
  }
}

TEST_CASE("the sign convention makes the largest loading positive and duplicates coincide") {
  catreid::Rng rng(5);
  Eigen::MatrixXd v = test::random_matrix(10, 4, rng);
  v.row(9) = v.row(2);
  const auto a = project_linear(table_of(v));
  const auto b = project_linear(table_of(-v));
  // Negating the data flips the loadings; the fixed sign convention flips them back.
  CHECK((a.xy + b.xy).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((a.xy.row(9) - a.xy.row(2)).norm() < 1e-12);
}

TEST_CASE("rank-deficient data pads missing coordinates with zeros and warns") {
  Eigen::MatrixXd line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) << i, 2.0 * i, -i;
  const auto p = project_linear(table_of(line));
  CHECK(p.xy.col(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(p.warnings.empty());
  const auto constant = project_linear(table_of(Eigen::MatrixXd::Ones(4, 3)));
  CHECK(constant.xy.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(project_linear(table_of(Eigen::MatrixXd::Ones(2, 3))), catreid::Error);
}

TEST_CASE("an external projector reads CSV on stdin and writes id,x,y") {
  catreid::Rng rng(6);
  const auto t = table_of(test::random_matrix(5, 3, rng));
  // Reverse row order so the reader has to match by id.
  const auto p = project_external(t, "awk -F, 'NR>1 {print $1\",\"NR\",\"$4}' | sort -r");
  REQUIRE(p.ids == t.ids);
  for (int i = 0; i < 5; ++i) {
    CHECK(p.xy(i, 0) == i + 2);
    CHECK(p.xy(i, 1) == doctest::Approx(t.vectors(i, 0)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(project_external(t, "exit 3"), catreid::Error);
  CHECK_THROWS_AS(project_external(t, "echo r0,1,2"), catreid::Error);
}

TEST_CASE("scatter plot renders one colour per cat") {
  catreid::Rng rng(7);
  const auto t = table_of(test::random_matrix(12, 4, rng));
  const cv::Mat img = render_scatter(t, project_linear(t), 400);
  CHECK(img.rows == 400);
  CHECK(img.cols > 400);
  CHECK(img.type() == CV_8UC3);
}

TEST_CASE("CSV field helpers") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_split("a,\"b,c\",\"d\"\"e\"") == std::vector<std::string>{"a", "b,c", "d\"e"});
}
