#include <csignal>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "lfa/pipeline.hpp"
#include "lfa/service.hpp"

namespace fs = std::filesystem;
using namespace lfa;

namespace {

void print_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    write_text(path, j.dump(2) + "\n");
  }
}

Detector load_detector_from(const fs::path& models, double score_threshold) {
  DetectorConfig cfg;
  cfg.score_threshold = score_threshold;
  return load_detector(models / "detector.lfam", cfg);
}

Network<float> load_classifier_from(const fs::path& models) {
  DecodedModel m = load_model(models / "classifier.lfam");
  if (m.kind != ModelKind::Classifier) throw std::runtime_error("classifier.lfam is not a classifier");
  return std::move(m.network);
}

struct GenOpts {
  std::string out;
  std::size_t n = 2560;
  std::uint64_t seed = 1;
  std::vector<double> mix{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double edge_fraction = 0;
};

struct DetOpts {
  std::string corpus, out = "models/detector.lfam", history;
  DetectorConfig cfg;
};

struct ClsOpts {
  std::string corpus, out_dir = "models";
  TrainConfig cfg;
  std::size_t background = 64;
};

struct EvalOpts {
  std::string corpus, models = "models", report, split = "test";
  std::uint64_t seed = 42;
  bool detector = true, classifier = true;
  double score_threshold = 0.5;
};

struct PredictOpts {
  std::string image, models = "models";
  double score_threshold = 0.5;
};

struct ExplainOpts {
  std::string image, models = "models", out = "overlay.png", lfaa;
  std::string errors_corpus, out_dir = "forensics";
  std::uint64_t seed = 42;
  std::size_t steps = 128, backgrounds = 64;
  double score_threshold = 0.5;
};

struct ServeOpts {
  std::string host = "127.0.0.1", models = "models", store = "store", console = "console/dist";
  int port = 8080;
  double score_threshold = 0.5;
  std::size_t attribution_steps = 16, attribution_backgrounds = 8;
};

void run_gen(const GenOpts& o) {
  if (o.mix.size() != 3) throw std::invalid_argument("--mix takes three values: positive,negative,invalid");
  CorpusSpec spec;
  spec.n = o.n;
  spec.seed = o.seed;
  spec.mix = {o.mix[0], o.mix[1], o.mix[2]};
  spec.ranges.edge_fraction = o.edge_fraction;
  const auto recs = generate_corpus(spec, o.out);
  std::cerr << "wrote " << recs.size() << " samples to " << o.out << '\n';
}

void run_train_detector(const DetOpts& o) {
  const Corpus corpus = load_corpus(o.corpus);
  const auto data = detection_examples(corpus, o.cfg.input);
  Detector det(build_detector_network(o.cfg.seed, o.cfg.input), o.cfg);
  const auto split = split_detection_set(data.size(), o.cfg);
  const auto hist = train_detector(det, data, split, [](const DetectorEpoch& e) {
    std::fprintf(stderr, "epoch %zu  obj %.4f box %.4f  val obj %.4f box %.4f  (%.1fs)\n", e.epoch,
                 e.train_objectness, e.train_box, e.val_objectness, e.val_box, e.seconds);
  });
  save_detector(o.out, det);
  const fs::path history = o.history.empty() ? fs::path(o.out).replace_extension(".csv") : fs::path(o.history);
  write_text(history, detector_history_csv(hist));
  std::cerr << "best epoch " << hist.best_epoch << "; saved " << o.out << '\n';
}

void run_train_classifier(const ClsOpts& o) {
  const Corpus corpus = load_corpus(o.corpus);
  const Dataset data = classifier_dataset(corpus);
  auto run = train_classifier_run(data, o.cfg, o.background, [](const EpochStats& e) {
    std::fprintf(stderr, "epoch %zu  loss %.4f acc %.4f  val loss %.4f acc %.4f  (%.1fs)\n", e.epoch,
                 e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.seconds);
  });
  const fs::path dir = o.out_dir;
  save_model(dir / "classifier.lfam", run.net, ModelKind::Classifier);
  write_file_bytes(dir / "background.lfab", encode_background(run.background));
  write_text(dir / "classifier_history.csv", run.history.to_csv());
  std::cerr << "best epoch " << run.history.best_epoch << " (val acc " << run.history.best_val_acc
            << "); saved " << (dir / "classifier.lfam").string() << '\n';
}

void run_eval(const EvalOpts& o) {
  const Corpus corpus = load_corpus(o.corpus);
  nlohmann::json report;
  const fs::path models = o.models;
  if (o.classifier) {
    const auto net = load_classifier_from(models);
    const Dataset data = classifier_dataset(corpus, net.input_shape()[0]);
    std::vector<Batch> batches;
    if (o.split == "test") {
      TrainConfig cfg;
      cfg.seed = o.seed;
      batches = split_batches(data.count(), cfg).test;
    } else if (o.split == "all") {
      Batch all(data.count());
      std::iota(all.begin(), all.end(), 0);
      batches.push_back(all);
    } else {
      throw std::invalid_argument("--split must be test or all");
    }
    const auto ev = evaluate_classifier(net, data, batches);
    report["classifier"] = to_json(ev.cm, ev.metrics);
  }
  if (o.detector) {
    const Detector det = load_detector_from(models, o.score_threshold);
    std::vector<Image> images;
    std::vector<BBox> truth;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
      images.push_back(corpus.image(i));
      truth.push_back(corpus.records[i].bbox_exact);
    }
    report["detector"] = to_json(evaluate_detector(det, images, truth));
  }
  print_json(report, o.report);
}

nlohmann::json prediction_json(const Prediction& p) {
  return {{"label", to_string(p.label)},
          {"confidence", p.confidence},
          {"confidence_text", format_confidence(p.confidence)},
          {"class_probs",
           {{"POSITIVE", p.class_probs[0]}, {"NEGATIVE", p.class_probs[1]}, {"INVALID", p.class_probs[2]}}}};
}

void run_predict(const PredictOpts& o) {
  const fs::path models = o.models;
  const Detector det = load_detector_from(models, o.score_threshold);
  const auto net = load_classifier_from(models);
  const Image img = read_image(o.image);
  const auto dets = det.detect(img);
  if (dets.empty()) {
    print_json({{"status", "no_membrane"}}, "");
    return;
  }
  const BBox& b = dets.front().box;
  print_json({{"status", "done"},
              {"bbox", {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}},
              {"detection_score", dets.front().score},
              {"result", prediction_json(predict(net, crop_membrane(img, b)))}},
             "");
}

BackgroundSet load_background(const fs::path& models, std::size_t count) {
  BackgroundSet bg = decode_background(read_file_bytes(models / "background.lfab"));
  if (bg.samples.size() > count) bg.samples.resize(count);
  return bg;
}

Image overlay_for(const std::vector<float>& pixels01, std::size_t size, const AttributionMap& map) {
  Plane gray{size, size, pixels01};
  for (auto& v : gray.values) v *= 255.0f;
  return render_overlay(gray_to_rgb(gray), map);
}

void run_explain_image(const ExplainOpts& o) {
  const fs::path models = o.models;
  const Detector det = load_detector_from(models, o.score_threshold);
  const auto net = load_classifier_from(models);
  const BackgroundSet bg = load_background(models, o.backgrounds);
  const Image img = read_image(o.image);
  const auto dets = det.detect(img);
  if (dets.empty()) throw std::runtime_error("no membrane detected in " + o.image);
  const Image crop = crop_membrane(img, dets.front().box);
  const std::size_t s = net.input_shape()[0];
  const auto pixels = preprocess(crop, s);
  auto x = pixels;
  standardize(x);
  const Prediction pred = predict(net, crop);
  AttributionOptions opt;
  opt.steps = o.steps;
  const auto map = attribute(net, x, ordinal(pred.label), bg, opt);
  write_png(o.out, overlay_for(pixels, s, map));
  if (!o.lfaa.empty()) write_file_bytes(o.lfaa, encode_attribution(map));
  const auto c = completeness_residual(net, x, ordinal(pred.label), map, bg);
  print_json({{"result", prediction_json(pred)},
              {"overlay", o.out},
              {"completeness_residual", c.residual},
              {"output_gap", c.output_gap}},
             "");
}

// Overlay and top-10 pixel report for every misclassified test sample.
void run_explain_errors(const ExplainOpts& o) {
  const fs::path models = o.models, out = o.out_dir;
  const auto net = load_classifier_from(models);
  const BackgroundSet bg = load_background(models, o.backgrounds);
  const Corpus corpus = load_corpus(o.errors_corpus);
  const std::size_t s = net.input_shape()[0];
  TrainConfig cfg;
  cfg.seed = o.seed;
  const auto test = split_batches(corpus.records.size(), cfg).test;
  AttributionOptions opt;
  opt.steps = o.steps;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& b : test) {
    for (auto i : b) {
      const auto& r = corpus.records[i];
      const Image crop = crop_membrane(corpus.image(i), r.bbox_exact);
      const Prediction pred = predict(net, crop);
      if (pred.label == r.label) continue;
      const auto pixels = preprocess(crop, s);
      auto x = pixels;
      standardize(x);
      const auto map = attribute(net, x, ordinal(pred.label), bg, opt);
      const std::string stem = fs::path(r.path).stem().string();
      write_png(out / (stem + "_overlay.png"), overlay_for(pixels, s, map));
      auto e = forensic_entry(r, pred, map);
      e["overlay"] = stem + "_overlay.png";
      entries.push_back(e);
      std::cerr << r.path << ": " << to_string(r.label) << " -> " << to_string(pred.label) << '\n';
    }
  }
  write_text(out / "report.json", nlohmann::json{{"errors", entries}}.dump(2) + "\n");
  std::cerr << entries.size() << " misclassified test samples; report in " << (out / "report.json").string() << '\n';
}

// Config-file values become option defaults, so LFA_* variables and flags
// (both applied during parsing) override them.
void apply_config_file(CLI::App& app, const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("config file not found: " + path);
  const CLI::ConfigTOML reader;
  for (const auto& item : reader.from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    CLI::App* scope = &app;
    for (const auto& parent : item.parents) scope = scope->get_subcommand(parent);
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    scope->get_option("--" + item.name)->default_val(value);
  }
}

std::string config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  const char* env = std::getenv("LFA_CONFIG");
  return env ? env : "";
}

httplib::Server* g_server = nullptr;

void run_serve(const ServeOpts& o) {
  auto bundle = std::make_shared<ModelBundle>(load_model_bundle(o.models));
  bundle->detector.config().score_threshold = o.score_threshold;
  bundle->attribution.steps = o.attribution_steps;
  bundle->attribution_backgrounds = o.attribution_backgrounds;
  AnalysisService svc(bundle, o.store);
  httplib::Server server;
  install_routes(server, svc, o.console);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "listening on http://" << o.host << ':' << o.port << "  (" << svc.record_count()
            << " stored analyses)\n";
  if (!server.listen(o.host, o.port)) throw std::runtime_error("cannot listen on port " + std::to_string(o.port));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lateral flow assay analysis toolkit"};
  app.require_subcommand(1);
  std::string config;
  app.add_option("--config", config, "TOML/INI config file (flags and LFA_* variables take precedence)")
      ->envname("LFA_CONFIG");

  GenOpts gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic labelled corpus");
  g->add_option("--out", gen.out, "Output directory")->required()->envname("LFA_OUT");
  g->add_option("--n", gen.n, "Number of images")->envname("LFA_N")->capture_default_str();
  g->add_option("--seed", gen.seed, "Corpus seed")->envname("LFA_SEED")->capture_default_str();
  g->add_option("--mix", gen.mix, "Class shares: positive,negative,invalid")->delimiter(',')->expected(3)->envname("LFA_MIX");
  g->add_option("--edge-fraction", gen.edge_fraction, "Share of kits touching a border")->envname("LFA_EDGE_FRACTION")->capture_default_str();

  DetOpts det;
  auto* td = app.add_subcommand("train-detector", "Train the membrane detector");
  td->add_option("--corpus", det.corpus, "Corpus directory")->required()->envname("LFA_CORPUS");
  td->add_option("--out", det.out, "Model file")->envname("LFA_DETECTOR_OUT")->capture_default_str();
  td->add_option("--history", det.history, "Loss history CSV (default: next to the model)");
  td->add_option("--epochs", det.cfg.epochs, "Epochs")->envname("LFA_EPOCHS")->capture_default_str();
  td->add_option("--batch", det.cfg.batch_size, "Batch size")->envname("LFA_BATCH")->capture_default_str();
  td->add_option("--lr", det.cfg.adam.learning_rate, "Adam learning rate")->envname("LFA_LR")->capture_default_str();
  td->add_option("--seed", det.cfg.seed, "Seed")->envname("LFA_SEED")->capture_default_str();
  td->add_option("--time-budget", det.cfg.time_budget_s, "Stop after this many seconds (0 = off)")->envname("LFA_TIME_BUDGET");

  ClsOpts cls;
  auto* tc = app.add_subcommand("train-classifier", "Train the membrane classifier on ground-truth crops");
  tc->add_option("--corpus", cls.corpus, "Corpus directory")->required()->envname("LFA_CORPUS");
  tc->add_option("--out-dir", cls.out_dir, "Writes classifier.lfam, background.lfab, classifier_history.csv")->envname("LFA_MODELS")->capture_default_str();
  tc->add_option("--epochs", cls.cfg.epochs, "Epochs")->envname("LFA_EPOCHS")->capture_default_str();
  tc->add_option("--batch", cls.cfg.batch_size, "Batch size")->envname("LFA_BATCH")->capture_default_str();
  tc->add_option("--lr", cls.cfg.adam.learning_rate, "Adam learning rate")->envname("LFA_LR")->capture_default_str();
  tc->add_option("--seed", cls.cfg.seed, "Split/initialisation seed")->envname("LFA_SEED")->capture_default_str();
  tc->add_option("--background-size", cls.background, "Attribution background samples")->envname("LFA_BACKGROUND_SIZE")->capture_default_str();
  tc->add_option("--stop-at", cls.cfg.stop_at_val_accuracy, "Stop once validation accuracy reaches this")->envname("LFA_STOP_AT");
  tc->add_option("--time-budget", cls.cfg.time_budget_s, "Stop after this many seconds (0 = off)")->envname("LFA_TIME_BUDGET");

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Emit a metrics report for trained models");
  e->add_option("--corpus", ev.corpus, "Corpus directory")->required()->envname("LFA_CORPUS");
  e->add_option("--models", ev.models, "Model directory")->envname("LFA_MODELS")->capture_default_str();
  e->add_option("--report", ev.report, "Report file (default stdout)");
  e->add_option("--split", ev.split, "Classifier samples: test (held-out split) or all")->check(CLI::IsMember({"test", "all"}))->capture_default_str();
  e->add_option("--seed", ev.seed, "Seed the classifier split was made with")->envname("LFA_SEED")->capture_default_str();
  e->add_option("--score-threshold", ev.score_threshold, "Detector score threshold")->envname("LFA_SCORE_THRESHOLD");
  e->add_flag("!--no-detector", ev.detector, "Skip the detector");
  e->add_flag("!--no-classifier", ev.classifier, "Skip the classifier");

  PredictOpts pr;
  auto* p = app.add_subcommand("predict", "Detect, crop and classify one photo");
  p->add_option("image", pr.image, "PNG or JPEG file")->required()->check(CLI::ExistingFile);
  p->add_option("--models", pr.models, "Model directory")->envname("LFA_MODELS")->capture_default_str();
  p->add_option("--score-threshold", pr.score_threshold, "Detector score threshold")->envname("LFA_SCORE_THRESHOLD");

  ExplainOpts ex;
  auto* x = app.add_subcommand("explain", "Attribution overlay for a photo, or forensics over test errors");
  x->add_option("image", ex.image, "PNG or JPEG file")->check(CLI::ExistingFile);
  x->add_option("--models", ex.models, "Model directory")->envname("LFA_MODELS")->capture_default_str();
  x->add_option("--out", ex.out, "Overlay PNG")->capture_default_str();
  x->add_option("--lfaa", ex.lfaa, "Also write the raw attribution grid");
  x->add_option("--steps", ex.steps, "Path points per background")->envname("LFA_STEPS")->capture_default_str();
  x->add_option("--backgrounds", ex.backgrounds, "Background samples used")->envname("LFA_BACKGROUNDS")->capture_default_str();
  x->add_option("--errors", ex.errors_corpus, "Corpus whose test-split errors are explained");
  x->add_option("--out-dir", ex.out_dir, "Forensics output directory")->capture_default_str();
  x->add_option("--seed", ex.seed, "Seed the classifier split was made with")->envname("LFA_SEED")->capture_default_str();
  x->add_option("--score-threshold", ex.score_threshold, "Detector score threshold")->envname("LFA_SCORE_THRESHOLD");

  ServeOpts sv;
  auto* s = app.add_subcommand("serve", "Run the HTTP analysis service");
  s->add_option("--host", sv.host, "Bind address")->envname("LFA_HOST")->capture_default_str();
  s->add_option("--port", sv.port, "Port")->envname("LFA_PORT")->capture_default_str();
  s->add_option("--models", sv.models, "Model directory")->envname("LFA_MODELS")->capture_default_str();
  s->add_option("--store", sv.store, "Blob and record store")->envname("LFA_STORE")->capture_default_str();
  s->add_option("--console", sv.console, "Static console files served under /console/")->envname("LFA_CONSOLE")->capture_default_str();
  s->add_option("--score-threshold", sv.score_threshold, "Detector score threshold")->envname("LFA_SCORE_THRESHOLD");
  s->add_option("--attribution-steps", sv.attribution_steps, "Path points per background")->envname("LFA_ATTRIBUTION_STEPS")->capture_default_str();
  s->add_option("--attribution-backgrounds", sv.attribution_backgrounds, "Background samples per attribution")->envname("LFA_ATTRIBUTION_BACKGROUNDS")->capture_default_str();

  try {
    const std::string cfg_path = config_path(argc, argv);
    if (!cfg_path.empty()) apply_config_file(app, cfg_path);
  } catch (const std::exception& err) {
    std::cerr << "error: config: " << err.what() << '\n';
    return 1;
  }
  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) run_gen(gen);
    if (*td) run_train_detector(det);
    if (*tc) run_train_classifier(cls);
    if (*e) run_eval(ev);
    if (*p) run_predict(pr);
    if (*x) {
      if (!ex.errors_corpus.empty()) {
        run_explain_errors(ex);
      } else if (!ex.image.empty()) {
        run_explain_image(ex);
      } else {
        throw std::invalid_argument("explain needs an image or --errors <corpus>");
      }
    }
    if (*s) run_serve(sv);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
