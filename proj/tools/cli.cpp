#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "catreid/augmentation.hpp"
#include "catreid/checkpoint.hpp"
#include "catreid/dataset.hpp"
#include "catreid/embedding_export.hpp"
#include "catreid/error.hpp"
#include "catreid/evaluator.hpp"
#include "catreid/part_geometry.hpp"
#include "catreid/pipeline.hpp"
#include "catreid/random.hpp"
#include "catreid/toydata.hpp"
#include "catreid/trainer.hpp"

namespace catreid::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string manifest;
  std::string out;
  std::string config;
  std::string checkpoint;
  std::string partition = "side+time";
  std::uint64_t seed = 0;
  bool skip_invalid = false;

  double split_ratio = 0.6;
  double dedup_seconds = 0.0;
  int day_start = 6;
  int day_end = 18;
  bool no_sidecars = false;

  int limit = 16;
  int count = 8;
  std::string record;

  std::string test_manifest;
  std::string resume;
  int epochs = 0;

  int sheets = 0;
  int k = 7;
  std::string query;

  std::string embeddings;
  std::string method = "linear";
  std::string projector;

  int cats = 4;
  int images_per_entity = 20;
  int day_cats = 1;
  int width = 192;
  int height = 144;
};

void log(const std::string& message) { std::cerr << "catreid: " << message << std::endl; }

data::LoadOptions load_options(const Options& o) {
  data::LoadOptions l;
  l.skip_invalid = o.skip_invalid;
  l.day_window = {o.day_start, o.day_end};
  l.use_detector_sidecars = !o.no_sidecars;
  return l;
}

data::Dataset load_dataset(const std::string& manifest, const Options& o, const std::string& partition) {
  auto loaded = data::load_manifest(manifest, load_options(o));
  for (const auto& issue : loaded.issues) {
    log("warning: " + manifest + ":" + std::to_string(issue.line) + ": " + issue.message);
  }
  return data::derive_entities(loaded.dataset, data::PartitionSetting::parse(partition));
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw Error(ErrorKind::usage, "--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
  f << doc.dump(2) << '\n';
}

void write_run_manifest(const fs::path& out, const std::string& subcommand, const std::vector<std::string>& argv,
                        const Options& o, std::uint64_t seed, nlohmann::json inputs) {
  nlohmann::json doc{{"toolkit", "catreid"},
                     {"version", kToolkitVersion},
                     {"subcommand", subcommand},
                     {"argv", argv},
                     {"config", o.config.empty() ? nlohmann::json(nullptr) : nlohmann::json(fs::absolute(o.config).string())},
                     {"seed", seed},
                     {"out", fs::absolute(out).string()},
                     {"inputs", std::move(inputs)}};
  write_json(out / "run_manifest.json", doc);
}

std::string absolute_or_empty(const std::string& p) { return p.empty() ? "" : fs::absolute(p).string(); }

// Rewrites image paths relative to the directory a derived manifest is written to.
std::vector<data::ImageRecord> relocated(const data::Dataset& ds, const fs::path& out_dir) {
  std::vector<data::ImageRecord> records = ds.records;
  for (auto& r : records) {
    const fs::path abs = fs::absolute(ds.resolve(r));
    const fs::path rel = fs::relative(abs, fs::absolute(out_dir));
    r.image_path = rel.empty() ? abs.string() : rel.string();
  }
  return records;
}

train::TrainConfig config_or_default(const Options& o) {
  return o.config.empty() ? train::TrainConfig{} : train::load_train_config(o.config);
}

// ---- subcommands ----

void cmd_ingest(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  auto loaded = data::load_manifest(o.manifest, load_options(o));
  data::Dataset ds = loaded.dataset;
  if (o.dedup_seconds > 0) ds = data::filter_sequences(ds, o.dedup_seconds);
  const auto setting = data::PartitionSetting::parse(o.partition);
  ds = data::derive_entities(ds, setting);

  nlohmann::json summary;
  summary["records"] = ds.records.size();
  summary["rejected"] = loaded.issues.size();
  summary["cats"] = ds.cats();
  summary["partition"] = setting.name();
  summary["entities"] = ds.entities();
  nlohmann::json counts;
  for (const auto& s : data::PartitionSetting::all()) counts[s.name()] = data::derive_entities(ds, s).entities().size();
  summary["entity_counts"] = counts;
  nlohmann::json issues = nlohmann::json::array();
  for (const auto& i : loaded.issues) issues.push_back({{"line", i.line}, {"message", i.message}});
  summary["issues"] = issues;

  if (ds.cats().size() >= 2) {
    auto [train_set, test_set] = data::split_train_test(ds, o.split_ratio, o.seed);
    data::write_manifest(out / "train.jsonl", relocated(train_set, out));
    data::write_manifest(out / "test.jsonl", relocated(test_set, out));
    summary["split"] = {{"ratio", o.split_ratio},
                        {"seed", o.seed},
                        {"train_cats", train_set.cats()},
                        {"test_cats", test_set.cats()},
                        {"train_records", train_set.records.size()},
                        {"test_records", test_set.records.size()},
                        {"train_entities", train_set.entities().size()},
                        {"test_entities", test_set.entities().size()}};
  } else {
    log("warning: fewer than two cats; no train/test split written");
  }
  data::write_manifest(out / "dataset.jsonl", relocated(ds, out));
  write_json(out / "dataset_summary.json", summary);
  write_run_manifest(out, "ingest", argv, o, o.seed, {{"manifest", absolute_or_empty(o.manifest)}});
  std::cout << "records=" << ds.records.size() << " rejected=" << loaded.issues.size()
            << " entities=" << ds.entities().size() << '\n';
}

void cmd_crop_preview(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  const auto config = config_or_default(o);
  const auto parts = pipeline::part_config_for(config.parts, config.stream);
  auto loaded = data::load_manifest(o.manifest, load_options(o));
  const auto& ds = loaded.dataset;
  const int n = std::min<int>(o.limit, static_cast<int>(ds.records.size()));
  fs::create_directories(out / "crops");
  for (int i = 0; i < n; ++i) {
    const auto& r = ds.records[i];
    const cv::Mat image = pipeline::read_image(ds.resolve(r));
    const auto crops = geometry::part_crops(r.keypoints, parts);
    cv::Mat overlay = geometry::draw_part_overlay(image, crops, &r.keypoints);
    cv::rectangle(overlay, cv::Rect2d(r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h), cv::Scalar(255, 255, 255), 1);
    // Strip of extracted parts under the overlay; invalid parts stay blank.
    const int tile = 64;
    cv::Mat strip(tile, std::max(overlay.cols, 7 * tile), CV_8UC3, cv::Scalar(255, 255, 255));
    for (std::size_t p = 0; p < crops.size(); ++p) {
      const auto part = geometry::extract_part(image, crops[p], parts.image_size(crops[p].part));
      if (!part) continue;
      cv::Mat t;
      const double s = static_cast<double>(tile) / std::max(part->cols, part->rows);
      cv::resize(*part, t, cv::Size(std::max(1, int(part->cols * s)), std::max(1, int(part->rows * s))));
      t.copyTo(strip(cv::Rect(static_cast<int>(p) * tile, 0, t.cols, t.rows)));
    }
    cv::Mat padded(overlay.rows, strip.cols, CV_8UC3, cv::Scalar(255, 255, 255));
    overlay.copyTo(padded(cv::Rect(0, 0, overlay.cols, overlay.rows)));
    cv::Mat sheet;
    cv::vconcat(padded, strip, sheet);
    std::string name = r.id;
    for (char& c : name) {
      if (c == '/' || c == '\\') c = '_';
    }
    pipeline::write_png(out / "crops" / (name + ".png"), sheet);
  }
  write_run_manifest(out, "crop-preview", argv, o, 0, {{"manifest", absolute_or_empty(o.manifest)}});
  std::cout << "previews=" << n << '\n';
}

void cmd_augment_preview(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  const auto config = config_or_default(o);
  auto loaded = data::load_manifest(o.manifest, load_options(o));
  const auto& ds = loaded.dataset;
  if (ds.records.empty()) throw Error(ErrorKind::validation, "manifest has no usable records");
  std::vector<std::size_t> rows;
  if (!o.record.empty()) {
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      if (ds.records[i].id == o.record) rows.push_back(i);
    }
    if (rows.empty()) throw Error(ErrorKind::validation, "no record with id " + o.record);
  } else {
    for (std::size_t i = 0; i < std::min<std::size_t>(4, ds.records.size()); ++i) rows.push_back(i);
  }
  const int tile = 128;
  cv::Mat sheet(static_cast<int>(rows.size()) * tile, (o.count + 1) * tile, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto working = pipeline::load_working_image(ds, rows[r], 0);
    auto augment = config.augment;
    if (!augment.erase_fill) augment.erase_fill = cv::mean(working.image);
    for (int c = 0; c <= o.count; ++c) {
      cv::Mat img = c == 0 ? working.image
                           : augment::augment(working.image, augment, derive_seed(o.seed, rows[r], c));
      cv::Mat t;
      cv::resize(img, t, cv::Size(tile, tile), 0, 0, cv::INTER_AREA);
      t.copyTo(sheet(cv::Rect(c * tile, static_cast<int>(r) * tile, tile, tile)));
    }
  }
  pipeline::write_png(out / "augment_preview.png", sheet);
  write_run_manifest(out, "augment-preview", argv, o, o.seed, {{"manifest", absolute_or_empty(o.manifest)}});
  std::cout << "sheet=" << (out / "augment_preview.png").string() << '\n';
}

void cmd_train(const Options& o, const std::vector<std::string>& argv, bool seed_given) {
  const fs::path out = prepare_out(o.out);
  auto config = train::load_train_config(o.config);
  if (seed_given) config.seed = o.seed;
  if (o.epochs > 0) config.epochs = o.epochs;
  config.validate();
  const std::string manifest = !o.manifest.empty() ? o.manifest : config.manifest.string();
  if (manifest.empty()) throw Error(ErrorKind::usage, "no training manifest: pass --manifest or set data.manifest");
  auto loaded = data::load_manifest(manifest, load_options(o));
  for (const auto& issue : loaded.issues) log("warning: " + manifest + ":" + std::to_string(issue.line) + ": " + issue.message);
  data::Dataset train_set = loaded.dataset;
  if (config.dedup_seconds > 0) train_set = data::filter_sequences(train_set, config.dedup_seconds);
  train_set = data::derive_entities(train_set, data::PartitionSetting::parse(config.partition));

  train::TrainOptions options;
  options.out_dir = out;
  options.log = log;
  data::Dataset test_set;
  if (!o.test_manifest.empty()) {
    test_set = load_dataset(o.test_manifest, o, config.partition);
    for (const auto& r : test_set.records) options.forbidden_ids.push_back(r.id);
    options.validation = &test_set;
  }
  if (!o.resume.empty()) options.resume = fs::path(o.resume);
  // Provenance is written first so an interrupted run still documents itself.
  write_run_manifest(out, "train", argv, o, config.seed,
                     {{"manifest", absolute_or_empty(manifest)},
                      {"test_manifest", absolute_or_empty(o.test_manifest)},
                      {"resume", absolute_or_empty(o.resume)}});
  std::ofstream(out / "config.resolved.conf") << train::to_text(config);
  log("training on " + std::to_string(train_set.records.size()) + " images, " +
      std::to_string(train_set.entities().size()) + " entities");
  const auto result = train::train(config, train_set, options);
  std::cout << "checkpoint=" << result.checkpoint.string() << " steps=" << result.steps
            << " epochs=" << result.epochs_completed << '\n';
}

void write_sheet(const eval::EvalReport& report, const data::Dataset& ds, int query, int k, const fs::path& path) {
  const int kk = std::min<int>(k, static_cast<int>(report.per_query[query].ranking.size()));
  pipeline::write_png(path, eval::render_ranking_sheet(report, ds, query, kk));
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  }
  return s;
}

void cmd_eval(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  const auto ds = load_dataset(o.manifest, o, o.partition);
  const auto report = eval::evaluate(o.checkpoint, ds);
  eval::write_report(report, out / "eval_report.json");
  eval::write_rankings_csv(report, out / "rankings.csv");
  for (int q = 0; q < std::min<int>(o.sheets, report.num_queries); ++q) {
    if (report.per_query[q].ranking.empty()) break;
    write_sheet(report, ds, q, o.k, out / "sheets" / (safe_name(report.ids[q]) + ".png"));
  }
  write_run_manifest(out, "eval", argv, o, 0,
                     {{"checkpoint", absolute_or_empty(o.checkpoint)}, {"manifest", absolute_or_empty(o.manifest)}});
  std::cout << "mAP=" << report.mAP << " rank1=" << report.rank1() << " valid_queries=" << report.valid_queries
            << " skipped_queries=" << report.skipped_queries << '\n';
}

void cmd_query(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  const auto ds = load_dataset(o.manifest, o, o.partition);
  const auto report = eval::evaluate(o.checkpoint, ds);
  const int q = report.index_of(o.query);
  if (q < 0) throw Error(ErrorKind::validation, "query id " + o.query + " is not in the manifest");
  if (report.per_query[q].ranking.empty()) throw Error(ErrorKind::validation, "gallery is empty");
  const std::string stem = "query_" + safe_name(o.query);
  write_sheet(report, ds, q, o.k, out / (stem + ".png"));
  std::ofstream csv(out / (stem + ".csv"));
  csv << "query_id,rank,gallery_id,distance,is_match\n";
  const auto& r = report.per_query[q];
  for (int i = 0; i < std::min<int>(o.k, static_cast<int>(r.ranking.size())); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", r.distances[i]);
    csv << report.ids[q] << ',' << (i + 1) << ',' << report.ids[r.ranking[i]] << ',' << buf << ','
        << (r.is_match[i] ? 1 : 0) << '\n';
  }
  write_run_manifest(out, "query", argv, o, 0,
                     {{"checkpoint", absolute_or_empty(o.checkpoint)}, {"manifest", absolute_or_empty(o.manifest)},
                      {"query", o.query}});
  std::cout << "first_match_rank=" << r.first_match_rank << '\n';
}

void cmd_export(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  auto loaded = data::load_manifest(o.manifest, load_options(o));
  const auto ds = data::derive_entities(loaded.dataset, data::PartitionSetting::parse(o.partition));
  const auto table = exporter::embed_table(o.checkpoint, ds);
  if (table.size() == 0) log("warning: dataset is empty; writing a header-only file");
  exporter::write_embeddings_csv(table, out / "embeddings.csv");
  write_run_manifest(out, "export-embeddings", argv, o, 0,
                     {{"checkpoint", absolute_or_empty(o.checkpoint)}, {"manifest", absolute_or_empty(o.manifest)}});
  std::cout << "rows=" << table.size() << " dim=" << table.vectors.cols() << '\n';
}

void cmd_project(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  const auto table = exporter::read_embeddings_csv(fs::path(o.embeddings));
  exporter::Projection projection;
  if (o.method == "linear") {
    projection = exporter::project_linear(table);
  } else if (o.method == "external") {
    if (o.projector.empty()) throw Error(ErrorKind::usage, "--method external needs --projector");
    projection = exporter::project_external(table, o.projector);
  } else {
    throw Error(ErrorKind::usage, "unknown projection method " + o.method);
  }
  for (const auto& w : projection.warnings) log("warning: " + w);
  exporter::write_projection_csv(projection, out / "projection.csv");
  pipeline::write_png(out / "scatter.png", exporter::render_scatter(table, projection));
  write_run_manifest(out, "project", argv, o, 0,
                     {{"embeddings", absolute_or_empty(o.embeddings)}, {"method", o.method}, {"projector", o.projector}});
  std::cout << "rows=" << projection.ids.size() << '\n';
}

void cmd_toy(const Options& o, const std::vector<std::string>& argv) {
  const fs::path out = prepare_out(o.out);
  toy::ToyOptions t;
  t.cats = o.cats;
  t.images_per_entity = o.images_per_entity;
  t.day_cats = o.day_cats;
  t.width = o.width;
  t.height = o.height;
  t.seed = o.seed;
  const auto records = toy::generate_toy_dataset(t, out);
  write_run_manifest(out, "toy-data", argv, o, o.seed, nlohmann::json::object());
  std::cout << "records=" << records.size() << " manifest=" << (out / "manifest.jsonl").string() << '\n';
}

struct App {
  CLI::App app{"Pose-guided part-based re-identification toolkit for feral cats", "catreid"};
  Options o;
  std::map<std::string, CLI::App*> subs;
  CLI::Option* train_seed = nullptr;

  App() {
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    auto* ingest = add("ingest", "Validate a manifest, derive entities and write a cat-level train/test split");
    manifest_opt(ingest, true);
    out_opt(ingest);
    partition_opt(ingest);
    ingest->add_option("--split-ratio", o.split_ratio, "Fraction of cats in the training split")->capture_default_str();
    ingest->add_option("--seed", o.seed, "Split seed")->capture_default_str();
    ingest->add_option("--dedup-seconds", o.dedup_seconds, "Drop images within this many seconds of the previous one (0 = off)")
        ->capture_default_str();
    load_opts(ingest);

    auto* crop = add("crop-preview", "Render part quadrilaterals and extracted parts for visual audit");
    manifest_opt(crop, true);
    out_opt(crop);
    crop->add_option("--config", o.config, "Training config (part settings and sizes)");
    crop->add_option("--limit", o.limit, "Maximum number of records to render")->capture_default_str();
    load_opts(crop);

    auto* aug = add("augment-preview", "Write a contact sheet of augmented samples");
    manifest_opt(aug, true);
    out_opt(aug);
    aug->add_option("--config", o.config, "Training config (augmentation block)");
    aug->add_option("--count", o.count, "Augmented variants per record")->capture_default_str();
    aug->add_option("--record", o.record, "Preview only this record id");
    aug->add_option("--seed", o.seed, "Augmentation seed")->capture_default_str();
    load_opts(aug);

    auto* tr = add("train", "Train the multi-stream model");
    tr->add_option("--config", o.config, "Training config file")->required();
    out_opt(tr);
    manifest_opt(tr, false, "Training manifest (overrides data.manifest)");
    tr->add_option("--test-manifest", o.test_manifest,
                   "Held-out manifest: its ids are barred from training and it is scored after each epoch");
    tr->add_option("--resume", o.resume, "Checkpoint to resume from (last.ckpt of an earlier run)");
    tr->add_option("--epochs", o.epochs, "Override the configured epoch count");
    train_seed = tr->add_option("--seed", o.seed, "Override the configured seed");
    load_opts(tr);

    auto* ev = add("eval", "Leave-one-out evaluation: EvalReport JSON and rankings CSV");
    ckpt_opt(ev);
    manifest_opt(ev, true);
    out_opt(ev);
    partition_opt(ev);
    ev->add_option("--sheets", o.sheets, "Ranking sheets to render (first N queries)")->capture_default_str();
    ev->add_option("--k", o.k, "Gallery tiles per ranking sheet")->capture_default_str();
    load_opts(ev);

    auto* qu = add("query", "Rank the gallery for one query and render its ranking sheet");
    ckpt_opt(qu);
    manifest_opt(qu, true);
    out_opt(qu);
    partition_opt(qu);
    qu->add_option("--query", o.query, "Query record id")->required();
    qu->add_option("--k", o.k, "Gallery tiles")->capture_default_str();
    load_opts(qu);

    auto* ex = add("export-embeddings", "Write full-stream embeddings of a manifest to CSV");
    ckpt_opt(ex);
    manifest_opt(ex, true);
    out_opt(ex);
    partition_opt(ex);
    load_opts(ex);

    auto* pr = add("project", "Project an embedding CSV to 2-D and draw a scatter plot");
    pr->add_option("--embeddings", o.embeddings, "Embedding CSV")->required();
    out_opt(pr);
    pr->add_option("--method", o.method, "linear or external")->capture_default_str();
    pr->add_option("--projector", o.projector, "Shell command for --method external (CSV on stdin, id,x,y on stdout)");

    auto* toy = add("toy-data", "Generate the synthetic toy-cat dataset");
    out_opt(toy);
    toy->add_option("--cats", o.cats, "Number of cats")->capture_default_str();
    toy->add_option("--images-per-entity", o.images_per_entity, "Images per (cat, side, time) entity")->capture_default_str();
    toy->add_option("--day-cats", o.day_cats, "How many cats also get day images")->capture_default_str();
    toy->add_option("--width", o.width, "Image width")->capture_default_str();
    toy->add_option("--height", o.height, "Image height")->capture_default_str();
    toy->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
  }

  CLI::App* add(const std::string& name, const std::string& description) {
    auto* s = app.add_subcommand(name, description);
    subs[name] = s;
    return s;
  }
  void manifest_opt(CLI::App* s, bool required, const std::string& text = "JSON-lines manifest") {
    auto* opt = s->add_option("--manifest", o.manifest, text);
    if (required) opt->required();
  }
  void out_opt(CLI::App* s) { s->add_option("--out", o.out, "Output directory")->required(); }
  void ckpt_opt(CLI::App* s) { s->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required(); }
  void partition_opt(CLI::App* s) {
    s->add_option("--partition", o.partition, "Entity partition: none, time, side, side+time")->capture_default_str();
  }
  void load_opts(CLI::App* s) {
    s->add_flag("--skip-invalid", o.skip_invalid, "Report and skip invalid manifest lines instead of failing");
    s->add_option("--day-start", o.day_start, "First daytime hour when deriving day/night from capture_time")
        ->capture_default_str();
    s->add_option("--day-end", o.day_end, "First night-time hour")->capture_default_str();
    s->add_flag("--no-sidecars", o.no_sidecars, "Do not read <image>.bbox.json detector sidecars");
  }
};

std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }

int fail(ErrorKind kind, const std::string& message) {
  std::cerr << "catreid: error kind=" << to_string(kind) << " code=" << static_cast<int>(kind)
            << " message=" << quote(message) << std::endl;
  return static_cast<int>(kind);
}

}  // namespace

int run(int argc, char** argv) {
  App a;
  std::vector<std::string> args(argv, argv + argc);
  try {
    a.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return a.app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return a.app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::usage, e.what());
  }
  try {
    const auto& o = a.o;
    if (*a.subs["ingest"]) cmd_ingest(o, args);
    else if (*a.subs["crop-preview"]) cmd_crop_preview(o, args);
    else if (*a.subs["augment-preview"]) cmd_augment_preview(o, args);
    else if (*a.subs["train"]) cmd_train(o, args, a.train_seed->count() > 0);
    else if (*a.subs["eval"]) cmd_eval(o, args);
    else if (*a.subs["query"]) cmd_query(o, args);
    else if (*a.subs["export-embeddings"]) cmd_export(o, args);
    else if (*a.subs["project"]) cmd_project(o, args);
    else if (*a.subs["toy-data"]) cmd_toy(o, args);
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    std::cerr << "catreid: error kind=internal code=1 message=" << quote(e.what()) << std::endl;
    return 1;
  }
  return 0;
}

std::string reference_markdown() {
  App a;
  std::ostringstream md;
  md << "# catreid reference\n\n"
     << "Generated by `catreid-docgen`; do not edit by hand.\n\n"
     << "## Exit codes\n\n"
     << "| code | kind | meaning |\n|---|---|---|\n"
     << "| 0 | | success |\n"
     << "| 1 | internal | unexpected failure |\n"
     << "| 2 | usage | unknown flag, missing required flag |\n"
     << "| 3 | config | unreadable or invalid configuration |\n"
     << "| 4 | validation | invalid manifest record or input data |\n"
     << "| 5 | io | missing or unwritable file |\n"
     << "| 6 | numeric | non-finite loss, zero-norm embedding |\n"
     << "| 7 | model | checkpoint or tensor shape problem |\n\n"
     << "Errors are printed to stderr as one line:\n\n"
     << "```\ncatreid: error kind=<kind> code=<n> message=\"<text>\"\n```\n\n"
     << "## Subcommands\n\n";
  for (const auto& [name, sub] : a.subs) {
    md << "### " << name << "\n\n" << sub->get_description() << "\n\n";
    md << "| flag | default | required | description |\n|---|---|---|---|\n";
    for (const auto* opt : sub->get_options()) {
      if (opt->get_name() == "--help") continue;
      md << "| `" << opt->get_name() << "` | " << (opt->get_default_str().empty() ? "" : "`" + opt->get_default_str() + "`")
         << " | " << (opt->get_required() ? "yes" : "") << " | " << opt->get_description() << " |\n";
    }
    md << '\n';
  }
  md << "Every subcommand writes `run_manifest.json` (toolkit version, subcommand, full argv, config path, seed, "
        "output directory and input paths) into its `--out` directory and writes nothing outside it.\n\n";
  md << "## Training configuration keys\n\n"
     << "One `key = value` per line; `#` starts a comment. Lists and ranges are comma-separated, sizes are `WxH`. "
        "Relative paths resolve against the config file's directory. Unknown or repeated keys are errors.\n\n"
     << "| key | default | description |\n|---|---|---|\n";
  for (const auto& k : train::config_keys()) {
    md << "| `" << k.key << "` | `" << k.default_value << "` | " << k.description << " |\n";
  }
  return md.str();
}

}  // namespace catreid::cli
