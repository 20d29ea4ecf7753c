#include "catreid/embedding_export.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include <opencv2/imgproc.hpp>

#include "catreid/checkpoint.hpp"
#include "catreid/error.hpp"
#include "catreid/evaluator.hpp"
#include "catreid/pipeline.hpp"

namespace catreid::exporter {
namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_number(const std::string& text, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw Error(ErrorKind::validation, where + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::filesystem::path temp_path(const std::string& stem) {
  static std::atomic<int> counter{0};
  return std::filesystem::temp_directory_path() /
         ("catreid-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + stem);
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

}  // namespace

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current += c;
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

EmbeddingTable embed_table(const std::filesystem::path& checkpoint, const data::Dataset& dataset) {
  if (!dataset.has_entities() && !dataset.records.empty()) {
    throw Error(ErrorKind::validation, "export: entities not derived");
  }
  auto model = model::InferenceModel::from_checkpoint(checkpoint);
  EmbeddingTable table;
  table.vectors.resize(0, model.config().embed_dim);
  if (dataset.records.empty()) return table;
  const auto meta = model::Checkpoint::load(checkpoint, [](const std::string&) { return false; }).metadata;
  const int working = meta.value("working_max_side", pipeline::default_working_side(model.config()));
  table.vectors = eval::embed_dataset(
      dataset, model.config().full_image, [&](const nn::Tensor& x) { return model.forward_infer(x); }, 32,
      working);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    table.ids.push_back(dataset.records[i].id);
    table.cat_ids.push_back(dataset.records[i].cat_id);
    table.entity_ids.push_back(dataset.entity_of[i]);
  }
  return table;
}

void write_embeddings_csv(const EmbeddingTable& table, std::ostream& out) {
  out << "id,cat_id,entity_id";
  for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) out << ",e" << j;
  out << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << csv_escape(table.ids[i]) << ',' << csv_escape(table.cat_ids[i]) << ','
        << csv_escape(table.entity_ids[i]);
    for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) {
      out << ',' << number(table.vectors(static_cast<Eigen::Index>(i), j));
    }
    out << '\n';
  }
}

void write_embeddings_csv(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_embeddings_csv(table, out);
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

EmbeddingTable read_embeddings_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::validation, source + ": empty embedding file");
  const auto header = csv_split(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "cat_id" || header[2] != "entity_id") {
    throw Error(ErrorKind::validation, source + ": header must start with id,cat_id,entity_id");
  }
  const auto dim = static_cast<Eigen::Index>(header.size() - 3);
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (header[3 + j] != "e" + std::to_string(j)) {
      throw Error(ErrorKind::validation, source + ": column " + std::to_string(4 + j) + " must be e" + std::to_string(j));
    }
  }
  EmbeddingTable table;
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = csv_split(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (static_cast<Eigen::Index>(fields.size()) != dim + 3) {
      throw Error(ErrorKind::validation, where + ": expected " + std::to_string(dim + 3) + " fields");
    }
    table.ids.push_back(fields[0]);
    table.cat_ids.push_back(fields[1]);
    table.entity_ids.push_back(fields[2]);
    std::vector<double> row;
    for (Eigen::Index j = 0; j < dim; ++j) row.push_back(parse_number(fields[3 + j], where));
    rows.push_back(std::move(row));
  }
  table.vectors.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) table.vectors(static_cast<Eigen::Index>(i), j) = rows[i][j];
  }
  return table;
}

EmbeddingTable read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  return read_embeddings_csv(in, path.string());
}

Projection project_linear(const EmbeddingTable& table) {
  const Eigen::Index n = table.vectors.rows();
  if (n < 3) throw Error(ErrorKind::validation, "projection needs at least 3 rows");
  const Eigen::RowVectorXd mean = table.vectors.colwise().mean();
  const Eigen::MatrixXd centred = table.vectors.rowwise() - mean;
  Projection out;
  out.ids = table.ids;
  out.xy = Eigen::MatrixX2d::Zero(n, 2);
  if (centred.cols() == 0) {
    out.warnings.push_back("embeddings have no columns; projection is all zeros");
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double scale = std::max(1.0, table.vectors.cwiseAbs().maxCoeff());
  const double tol = 1e-10 * scale * static_cast<double>(std::max(n, centred.cols()));
  int rank = 0;
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, sv.size()); ++k) {
    if (sv(k) > tol) ++rank;
  }
  for (int k = 0; k < rank; ++k) {
    Eigen::VectorXd dir = svd.matrixV().col(k);
    Eigen::Index arg = 0;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir(arg) < 0) dir = -dir;
    out.xy.col(k) = centred * dir;
  }
  if (rank < 2) {
    out.warnings.push_back("data has " + std::to_string(rank) +
                           " non-degenerate direction(s); missing coordinates set to zero");
  }
  return out;
}

Projection read_projection_csv(std::istream& in, const std::string& source) {
  Projection p;
  std::vector<std::array<double, 2>> xy;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv_split(line);
    if (line_no == 1 && fields.size() == 3 && fields[0] == "id" && fields[1] == "x" && fields[2] == "y") continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != 3) throw Error(ErrorKind::validation, where + ": expected id,x,y");
    p.ids.push_back(fields[0]);
    xy.push_back({parse_number(fields[1], where), parse_number(fields[2], where)});
  }
  p.xy.resize(static_cast<Eigen::Index>(xy.size()), 2);
  for (std::size_t i = 0; i < xy.size(); ++i) {
    p.xy(static_cast<Eigen::Index>(i), 0) = xy[i][0];
    p.xy(static_cast<Eigen::Index>(i), 1) = xy[i][1];
  }
  return p;
}

Projection project_external(const EmbeddingTable& table, const std::string& command) {
  const auto input = temp_path("embeddings.csv");
  const auto output = temp_path("projection.csv");
  write_embeddings_csv(table, input);
  const std::string shell = "(" + command + ") < " + shell_quote(input.string()) + " > " +
                            shell_quote(output.string());
  const int status = std::system(shell.c_str());
  std::filesystem::remove(input);
  if (status != 0) {
    std::filesystem::remove(output);
    throw Error(ErrorKind::io, "projector command failed with status " + std::to_string(status) + ": " + command);
  }
  std::ifstream in(output);
  Projection raw = read_projection_csv(in, "projector output");
  in.close();
  std::filesystem::remove(output);

  // Reorder to the table's row order and check coverage.
  std::map<std::string, Eigen::Index> where;
  for (std::size_t i = 0; i < raw.ids.size(); ++i) {
    if (!where.emplace(raw.ids[i], static_cast<Eigen::Index>(i)).second) {
      throw Error(ErrorKind::io, "projector output repeats id " + raw.ids[i]);
    }
  }
  Projection out;
  out.ids = table.ids;
  out.xy.resize(static_cast<Eigen::Index>(table.size()), 2);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto it = where.find(table.ids[i]);
    if (it == where.end()) throw Error(ErrorKind::io, "projector output lacks id " + table.ids[i]);
    out.xy.row(static_cast<Eigen::Index>(i)) = raw.xy.row(it->second);
  }
  if (raw.ids.size() != table.size()) throw Error(ErrorKind::io, "projector output has unknown ids");
  return out;
}

void write_projection_csv(const Projection& projection, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << "id,x,y\n";
  for (std::size_t i = 0; i < projection.ids.size(); ++i) {
    out << csv_escape(projection.ids[i]) << ',' << number(projection.xy(static_cast<Eigen::Index>(i), 0)) << ','
        << number(projection.xy(static_cast<Eigen::Index>(i), 1)) << '\n';
  }
}

cv::Mat render_scatter(const EmbeddingTable& table, const Projection& projection, int size) {
  if (projection.ids.size() != table.size()) {
    throw Error(ErrorKind::validation, "scatter: projection and table differ in length");
  }
  static const std::array<cv::Scalar, 10> palette{
      cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44), cv::Scalar(40, 39, 214),
      cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140), cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127),
      cv::Scalar(34, 189, 188), cv::Scalar(207, 190, 23)};
  std::vector<std::string> cats(table.cat_ids.begin(), table.cat_ids.end());
  std::sort(cats.begin(), cats.end());
  cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
  std::map<std::string, int> marker_of;
  std::map<std::string, std::string> cat_of_entity;
  std::map<std::string, int> per_cat;
  std::vector<std::string> entities(table.entity_ids.begin(), table.entity_ids.end());
  for (std::size_t i = 0; i < table.size(); ++i) cat_of_entity[table.entity_ids[i]] = table.cat_ids[i];
  std::sort(entities.begin(), entities.end());
  entities.erase(std::unique(entities.begin(), entities.end()), entities.end());
  for (const auto& e : entities) marker_of[e] = per_cat[cat_of_entity[e]]++;
  auto colour_of = [&](const std::string& cat) {
    const auto idx = std::find(cats.begin(), cats.end(), cat) - cats.begin();
    return palette[static_cast<std::size_t>(idx) % palette.size()];
  };

  const int legend = 220, margin = 30;
  cv::Mat img(size, size + legend, CV_8UC3, cv::Scalar(255, 255, 255));
  auto draw_marker = [&](cv::Point c, int shape, const cv::Scalar& colour) {
    const int r = 6;
    switch (shape % 6) {
      case 0: cv::circle(img, c, r, colour, cv::FILLED, cv::LINE_AA); break;
      case 1: cv::rectangle(img, {c.x - r, c.y - r}, {c.x + r, c.y + r}, colour, cv::FILLED); break;
      case 2: {
        std::vector<cv::Point> tri{{c.x, c.y - r - 1}, {c.x - r, c.y + r}, {c.x + r, c.y + r}};
        cv::fillConvexPoly(img, tri, colour, cv::LINE_AA);
        break;
      }
      case 3: {
        std::vector<cv::Point> dia{{c.x, c.y - r - 1}, {c.x + r + 1, c.y}, {c.x, c.y + r + 1}, {c.x - r - 1, c.y}};
        cv::fillConvexPoly(img, dia, colour, cv::LINE_AA);
        break;
      }
      case 4:
        cv::line(img, {c.x - r, c.y}, {c.x + r, c.y}, colour, 2, cv::LINE_AA);
        cv::line(img, {c.x, c.y - r}, {c.x, c.y + r}, colour, 2, cv::LINE_AA);
        break;
      default:
        cv::line(img, {c.x - r, c.y - r}, {c.x + r, c.y + r}, colour, 2, cv::LINE_AA);
        cv::line(img, {c.x - r, c.y + r}, {c.x + r, c.y - r}, colour, 2, cv::LINE_AA);
    }
  };
  if (table.size() > 0) {
    const Eigen::Vector2d lo = projection.xy.colwise().minCoeff();
    const Eigen::Vector2d hi = projection.xy.colwise().maxCoeff();
    const Eigen::Vector2d span = (hi - lo).cwiseMax(1e-12);
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto row = projection.xy.row(static_cast<Eigen::Index>(i));
      const int x = margin + static_cast<int>((row(0) - lo(0)) / span(0) * (size - 2 * margin));
      const int y = size - margin - static_cast<int>((row(1) - lo(1)) / span(1) * (size - 2 * margin));
      draw_marker({x, y}, marker_of[table.entity_ids[i]], colour_of(table.cat_ids[i]));
    }
  }
  int y = margin;
  for (const auto& e : entities) {
    draw_marker({size + 16, y - 4}, marker_of[e], colour_of(cat_of_entity[e]));
    cv::putText(img, e, {size + 30, y}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    y += 18;
  }
  return img;
}

}  // namespace catreid::exporter
