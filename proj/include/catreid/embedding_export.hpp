#pragma once

// Embedding tables on disk and their 2-D projections for inspection plots.
//
// Embedding CSV:   id,cat_id,entity_id,e0,...,e{E-1}   (values printed with 17
//                  significant digits, so a read gives back the same doubles)
// Projection CSV:  id,x,y
//
// An external projector is any command that reads an embedding CSV on stdin
// and writes a projection CSV on stdout.

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>

#include "catreid/dataset.hpp"

namespace catreid::exporter {

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<std::string> cat_ids;
  std::vector<std::string> entity_ids;
  /// One row per record; the column count is E even for an empty table.
  Eigen::MatrixXd vectors;

  std::size_t size() const { return ids.size(); }
};

/// Embeds every record of `dataset` (entities derived) with the checkpoint's full stream.
EmbeddingTable embed_table(const std::filesystem::path& checkpoint, const data::Dataset& dataset);

void write_embeddings_csv(const EmbeddingTable& table, const std::filesystem::path& path);
void write_embeddings_csv(const EmbeddingTable& table, std::ostream& out);
EmbeddingTable read_embeddings_csv(const std::filesystem::path& path);
EmbeddingTable read_embeddings_csv(std::istream& in, const std::string& source = "<stream>");

struct Projection {
  std::vector<std::string> ids;
  Eigen::MatrixX2d xy;
  std::vector<std::string> warnings;
};

/// Centres the rows and projects them onto the top two principal directions.
/// Each direction's sign makes its largest-magnitude loading positive. With
/// fewer than two non-degenerate directions the missing coordinates are zero
/// and a warning is recorded. Needs at least 3 rows.
Projection project_linear(const EmbeddingTable& table);

/// Runs `command` through the shell with the embedding CSV on stdin and
/// parses id,x,y rows from its stdout. Throws Error(io) when the command fails
/// or its output does not cover every id exactly once.
Projection project_external(const EmbeddingTable& table, const std::string& command);

void write_projection_csv(const Projection& projection, const std::filesystem::path& path);
Projection read_projection_csv(std::istream& in, const std::string& source = "<stream>");

/// Scatter plot: one colour per cat, one marker shape per entity of that cat,
/// with a legend column on the right.
cv::Mat render_scatter(const EmbeddingTable& table, const Projection& projection, int size = 720);

// CSV helpers shared with the CLI.
std::string csv_escape(const std::string& field);
std::vector<std::string> csv_split(const std::string& line);

}  // namespace catreid::exporter
