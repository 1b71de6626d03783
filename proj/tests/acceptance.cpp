// Acceptance gate: one PASS/FAIL line per criterion. Thresholds, corpus
// sizes, seeds and time limits are pinned below.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "lfa/gradcheck.hpp"
#include "lfa/pipeline.hpp"
#include "lfa/service.hpp"

namespace fs = std::filesystem;
using namespace lfa;

namespace {

// 1: classifier architecture
constexpr double kC1Seconds = 10;
// 2: gradient check
constexpr std::size_t kC2Coordinates = 200;
constexpr double kC2Step = 1e-3;
constexpr double kC2MaxRelError = 1e-4;
constexpr double kC2Seconds = 60;
// 3: reference confusion matrix
constexpr double kC3AccuracyTol = 2e-4;
constexpr double kC3Tol = 1e-3;
constexpr double kC3Seconds = 1;
// 4: end-to-end classifier
constexpr std::size_t kC4Images = 2560;
constexpr std::uint64_t kC4CorpusSeed = 2024;
constexpr std::uint64_t kC4TrainSeed = 42;
constexpr std::size_t kC4Epochs = 6;
constexpr std::size_t kC4MaxEpochs = 60;
constexpr double kC4MinAccuracy = 0.97;
constexpr double kC4Seconds = 30 * 60;
// 5: detector
constexpr std::size_t kC5Train = 800, kC5Eval = 200, kC5Edge = 100;
constexpr std::uint64_t kC5CorpusSeed = 5, kC5EdgeSeed = 6;
constexpr double kC5TrainEdgeFraction = 0.25;
constexpr std::size_t kC5Epochs = 40;
constexpr double kC5MinMap50 = 0.90, kC5MinMap5095 = 0.50;
constexpr double kC5EdgeIou = 0.5, kC5MinEdgeRate = 0.90;
constexpr double kC5Seconds = 30 * 60;
// 6: attribution
constexpr std::size_t kC6Samples = 100, kC6Steps = 128, kC6Backgrounds = 64;
constexpr double kC6Residual = 0.01, kC6MinResidualRate = 0.95, kC6MinBandRate = 0.90;
constexpr double kC6Seconds = 20 * 60;
// 7: service
constexpr double kC7RoundTripSeconds = 2.0;
constexpr std::size_t kC7Concurrent = 16;
// 8: determinism
constexpr std::size_t kC8Images = 64;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ------------------------------------------------------------------ 1

Outcome criterion1() {
  const auto t0 = Clock::now();
  const std::vector<Shape> expected{
      {32, 126, 126, 128}, {32, 63, 63, 128}, {32, 63, 63, 128}, {32, 61, 61, 128},
      {32, 30, 30, 128},   {32, 30, 30, 128}, {32, 28, 28, 64},  {32, 14, 14, 64},
      {32, 14, 14, 64},    {32, 12, 12, 64},  {32, 6, 6, 64},    {32, 6, 6, 64},
      {32, 4, 4, 32},      {32, 2, 2, 32},    {32, 128},         {32, 128},
      {32, 16},            {32, 3}};
  const auto net = build_classifier_model(1);
  // Run a real batch so the shapes are the ones the forward pass produces.
  Tensor x({32, 128, 128, 1}, 0.5f);
  ForwardTrace<float> trace;
  net.forward(x, trace, Mode::Inference);
  const std::vector<Shape> got(trace.shapes.begin() + 1, trace.shapes.end());
  std::size_t match = 0;
  for (std::size_t i = 0; i < std::min(got.size(), expected.size()); ++i) match += got[i] == expected[i];
  auto conv = [](std::size_t cin, std::size_t cout) { return 9 * cin * cout + cout; };
  auto dense = [](std::size_t n, std::size_t m) { return n * m + m; };
  const std::size_t oracle = conv(1, 128) + conv(128, 128) + conv(128, 64) + conv(64, 64) +
                             conv(64, 32) + dense(128, 16) + dense(16, 3);
  const std::size_t params = net.parameter_count();
  const double s = since(t0);
  return {match == 18 && got.size() == 18 && params == oracle && s < kC1Seconds,
          fmt("shapes %zu/18, params %zu vs oracle %zu, %.1fs (< %.0fs)", match, params, oracle, s, kC1Seconds)};
}

// ------------------------------------------------------------------ 2

Outcome criterion2() {
  const auto t0 = Clock::now();
  Network<double> net({8, 8, 1}, {LayerSpec::conv(4), LayerSpec::maxpool(), LayerSpec::dropout(0.2f),
                                  LayerSpec::conv(6, 2, 2), LayerSpec::maxpool(), LayerSpec::flatten(),
                                  LayerSpec::dropout(0.2f), LayerSpec::dense(5, Activation::ReLU),
                                  LayerSpec::dense(3, Activation::Softmax)});
  net.initialize(21);
  BasicTensor<double> x({4, 8, 8, 1});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0, 1);
  for (auto& v : x.values()) v = d(rng);
  const auto y = one_hot<double>({0, 1, 2, 1}, 3);
  const auto r = gradcheck(net, x, y, kC2Coordinates, kC2Step);
  const double s = since(t0);
  return {r.coordinates_checked == kC2Coordinates && r.max_relative_error < kC2MaxRelError && s < kC2Seconds,
          fmt("%zu coordinates at h=%.0e, max rel error %.2e (< %.0e), %zu kink-straddling probes redrawn, %.1fs",
              r.coordinates_checked, kC2Step, r.max_relative_error, kC2MaxRelError, r.kinks_skipped, s)};
}

// ------------------------------------------------------------------ 3

Outcome criterion3() {
  const auto t0 = Clock::now();
  ConfusionMatrix cm;  // rows true, columns predicted: Positive, Negative, Invalid
  cm(ClassLabel::Invalid, ClassLabel::Invalid) = 30;
  cm(ClassLabel::Negative, ClassLabel::Invalid) = 1;
  cm(ClassLabel::Negative, ClassLabel::Negative) = 222;
  cm(ClassLabel::Negative, ClassLabel::Positive) = 1;
  cm(ClassLabel::Positive, ClassLabel::Negative) = 2;
  cm(ClassLabel::Positive, ClassLabel::Positive) = 200;
  const ClassMetrics m = prf_scores(cm);
  struct Check {
    const char* name;
    double got, want, tol;
  };
  const std::vector<Check> checks{
      {"accuracy", m.accuracy, 0.9912, kC3AccuracyTol},
      {"Invalid P", m.of(ClassLabel::Invalid).precision, 0.968, kC3Tol},
      {"Invalid R", m.of(ClassLabel::Invalid).recall, 1.000, kC3Tol},
      {"Negative P", m.of(ClassLabel::Negative).precision, 0.991, kC3Tol},
      {"Negative R", m.of(ClassLabel::Negative).recall, 0.996, kC3Tol},
      {"Positive P", m.of(ClassLabel::Positive).precision, 0.995, kC3Tol},
      {"Positive R", m.of(ClassLabel::Positive).recall, 0.990, kC3Tol},
      {"macro P", m.macro.precision, 0.985, kC3Tol},
      {"macro R", m.macro.recall, 0.995, kC3Tol},
      {"macro F1", m.macro.f1, 0.990, kC3Tol}};
  std::size_t ok = 0;
  std::string misses;
  for (const auto& c : checks) {
    if (std::abs(c.got - c.want) <= c.tol) {
      ++ok;
    } else {
      misses += fmt(" %s=%.4f (want %.3f)", c.name, c.got, c.want);
    }
  }
  const double s = since(t0);
  return {ok == checks.size() && s < kC3Seconds,
          fmt("%zu/%zu values within tolerance", ok, checks.size()) + (misses.empty() ? "" : ";" + misses)};
}

// ------------------------------------------------------------------ 4

Outcome criterion4(const fs::path& work) {
  const auto t0 = Clock::now();
  CorpusSpec spec;
  spec.n = kC4Images;
  spec.seed = kC4CorpusSeed;
  spec.mix = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const fs::path dir = work / "c4_corpus";
  fs::remove_all(dir);
  generate_corpus(spec, dir);
  const Dataset data = classifier_dataset(load_corpus(dir));
  std::cerr << "  c4: corpus ready (" << data.count() << " crops, " << fmt("%.0fs", since(t0)) << ")\n";
  TrainConfig cfg;
  cfg.epochs = kC4Epochs;
  cfg.seed = kC4TrainSeed;
  cfg.train_fraction = 0.70;
  cfg.val_fraction = 0.15;
  cfg.test_fraction = 0.15;
  auto run = train_classifier_run(data, cfg, kC6Backgrounds, [](const EpochStats& e) {
    std::cerr << fmt("  c4: epoch %zu loss %.4f acc %.4f val %.4f (%.0fs)\n", e.epoch, e.train_loss,
                     e.train_acc, e.val_acc, e.seconds);
  });
  const auto ev = evaluate_classifier(run.net, data, run.split.test);
  save_model(work / "models" / "classifier.lfam", run.net, ModelKind::Classifier);
  write_file_bytes(work / "models" / "background.lfab", encode_background(run.background));
  write_text(work / "models" / "classifier_history.csv", run.history.to_csv());
  const double s = since(t0);
  const double acc = ev.metrics.accuracy;
  return {acc >= kC4MinAccuracy && run.history.epochs.size() <= kC4MaxEpochs && s <= kC4Seconds,
          fmt("test accuracy %.4f (>= %.2f) on %zu held-out, %zu epochs, macro F1 %.4f, %.0fs (<= %.0fs)", acc,
              kC4MinAccuracy, ev.truth.size(), run.history.epochs.size(), ev.metrics.macro.f1, s, kC4Seconds)};
}

// ------------------------------------------------------------------ 5

Outcome criterion5(const fs::path& work) {
  const auto t0 = Clock::now();
  CorpusSpec spec;
  spec.n = kC5Train + kC5Eval;
  spec.seed = kC5CorpusSeed;
  spec.ranges.edge_fraction = kC5TrainEdgeFraction;
  const fs::path dir = work / "c5_corpus";
  fs::remove_all(dir);
  generate_corpus(spec, dir);
  const Corpus corpus = load_corpus(dir);
  const auto all = detection_examples(corpus);
  const std::vector<DetectionExample> train_set(all.begin(), all.begin() + kC5Train);
  DetectorConfig cfg;
  cfg.epochs = kC5Epochs;
  Detector det(build_detector_network(cfg.seed), cfg);
  const auto split = split_detection_set(train_set.size(), cfg);
  const auto hist = train_detector(det, train_set, split, [](const DetectorEpoch& e) {
    std::cerr << fmt("  c5: epoch %zu obj %.4f box %.4f val %.4f/%.4f (%.0fs)\n", e.epoch, e.train_objectness,
                     e.train_box, e.val_objectness, e.val_box, e.seconds);
  });
  save_detector(work / "models" / "detector.lfam", det);
  write_text(work / "models" / "detector_history.csv", detector_history_csv(hist));

  std::vector<Image> images;
  std::vector<BBox> truth;
  for (std::size_t i = kC5Train; i < corpus.records.size(); ++i) {
    images.push_back(corpus.image(i));
    truth.push_back(corpus.records[i].bbox_exact);
  }
  const auto report = evaluate_detector(det, images, truth);

  std::size_t edge_hits = 0;
  for (std::size_t k = 0; k < kC5Edge; ++k) {
    const auto p = draw_params(spec.ranges, label_from_ordinal(static_cast<int>(k % 3)),
                               splitmix64(kC5EdgeSeed * 1000 + k), true);
    const Sample smp = render_sample(p);
    const auto dets = det.detect_for_eval(smp.image);
    edge_hits += !dets.empty() && iou(dets.front().box, smp.truth.membrane_bbox) >= kC5EdgeIou;
  }
  const double edge_rate = static_cast<double>(edge_hits) / kC5Edge;
  const auto& first = hist.epochs.front();
  const auto& best = hist.epochs.at(hist.best_epoch - 1);
  const bool losses_fell = best.val_objectness < first.val_objectness && best.val_box < first.val_box;
  const double s = since(t0);
  return {report.map50 >= kC5MinMap50 && report.map50_95 >= kC5MinMap5095 && edge_rate >= kC5MinEdgeRate &&
              s <= kC5Seconds,
          fmt("mAP@50 %.4f (>= %.2f), mAP@50-95 %.4f (>= %.2f), edge IoU>=0.5 %zu/%zu (>= %.0f%%), "
              "best epoch %zu losses below epoch 1: %s, %.0fs (<= %.0fs)",
              report.map50, kC5MinMap50, report.map50_95, kC5MinMap5095, edge_hits, kC5Edge,
              kC5MinEdgeRate * 100, hist.best_epoch, losses_fell ? "yes" : "no", s, kC5Seconds)};
}

// ------------------------------------------------------------------ 6

Outcome criterion6(const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path models = work / "models";
  if (!fs::exists(models / "classifier.lfam") || !fs::exists(work / "c4_corpus" / "manifest.jsonl")) {
    return {false, "needs the criterion 4 classifier and corpus"};
  }
  const auto net = load_model(models / "classifier.lfam").network;
  BackgroundSet bg = decode_background(read_file_bytes(models / "background.lfab"));
  if (bg.samples.size() < kC6Backgrounds) return {false, "background set smaller than 64"};
  bg.samples.resize(kC6Backgrounds);
  const Corpus corpus = load_corpus(work / "c4_corpus");
  TrainConfig cfg;
  cfg.seed = kC4TrainSeed;
  std::vector<std::size_t> audit;
  for (const auto& b : split_batches(corpus.records.size(), cfg).test) {
    for (auto i : b) {
      if (audit.size() < kC6Samples) audit.push_back(i);
    }
  }

  struct Result {
    bool residual_ok = false, positive_correct = false, band_ok = false;
  };
  std::vector<std::optional<Result>> results(audit.size());
  std::atomic<std::size_t> next{0};
  std::atomic<double> slowest{0};
  AttributionOptions opt;
  opt.steps = kC6Steps;
  auto worker = [&] {
    for (;;) {
      // Do not start a sample that cannot finish inside the budget.
      if (since(t0) + slowest.load() > kC6Seconds) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= audit.size()) return;
      const auto ts = Clock::now();
      const auto& r = corpus.records[audit[k]];
      const Image crop = crop_membrane(corpus.image(audit[k]), r.bbox_exact);
      const auto x = classifier_input(crop, net.input_shape()[0]);
      const Prediction pred = predict(net, crop);
      const int target = ordinal(pred.label);
      const auto map = attribute(net, x, target, bg, opt);
      const auto c = completeness_residual(net, x, target, map, bg);
      Result res;
      res.residual_ok = c.within(kC6Residual);
      res.positive_correct = r.label == ClassLabel::Positive && pred.label == ClassLabel::Positive;
      if (res.positive_correct) {
        const BandMasks m = band_masks(r, map.width);
        res.band_ok = positive_mass(map, m.test) > positive_mass(map, m.background);
      }
      results[k] = res;
      double d = since(ts), cur = slowest.load();
      while (d > cur && !slowest.compare_exchange_weak(cur, d)) {
      }
      std::cerr << fmt("  c6: sample %zu residual %.3g of gap %.3g (%.0fs)\n", k, c.residual, c.output_gap, d);
    }
  };
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::size_t done = 0, residual_ok = 0, positives = 0, band_ok = 0;
  for (const auto& r : results) {
    if (!r) continue;
    ++done;
    residual_ok += r->residual_ok;
    positives += r->positive_correct;
    band_ok += r->band_ok;
  }
  const double residual_rate = done ? static_cast<double>(residual_ok) / done : 0.0;
  const double band_rate = positives ? static_cast<double>(band_ok) / positives : 0.0;
  const double s = since(t0);
  return {done == kC6Samples && residual_rate >= kC6MinResidualRate && positives > 0 &&
              band_rate >= kC6MinBandRate && s <= kC6Seconds,
          fmt("audited %zu/%zu (steps %zu, backgrounds %zu, %u threads); residual <= 1%%: %zu/%zu (>= 95%%); "
              "test band > background band: %zu/%zu correct positives (>= 90%%); %.0fs (<= %.0fs)",
              done, kC6Samples, kC6Steps, kC6Backgrounds, threads, residual_ok, done, band_ok, positives, s,
              kC6Seconds)};
}

// ------------------------------------------------------------------ 7

std::string png_sample(int canvas_w, int canvas_h, ClassLabel label, std::uint64_t seed) {
  GeneratorRanges r;
  r.canvas_w = canvas_w;
  r.canvas_h = canvas_h;
  const auto bytes = encode_png(render_sample(draw_params(r, label, seed, false)).image);
  return {bytes.begin(), bytes.end()};
}

Outcome criterion7(const fs::path& work) {
  auto bundle = std::make_shared<ModelBundle>();
  const fs::path models = work / "models";
  std::string note;
  if (fs::exists(models / "detector.lfam") && fs::exists(models / "classifier.lfam")) {
    *bundle = load_model_bundle(models);
  } else {
    bundle->detector = Detector(build_detector_network(1), DetectorConfig{});
    bundle->classifier = build_classifier_model(1);
    note = " [untrained models: criteria 4/5 not run]";
  }
  const fs::path store = work / "c7_store";
  fs::remove_all(store);
  std::string problems;
  double round_trip = 0;
  std::vector<nlohmann::json> before;
  {
    AnalysisService svc(bundle, store);
    httplib::Server server;
    install_routes(server, svc);
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(120);

    auto analyze_bytes = [&](const std::string& png) {
      auto up = cli.Post("/v1/images", png, "image/png");
      if (!up || up->status != 200) throw std::runtime_error("upload failed");
      const std::string id = nlohmann::json::parse(up->body).at("image_id");
      auto an = cli.Post("/v1/analyses", nlohmann::json{{"image_id", id}}.dump(), "application/json");
      if (!an || an->status != 200) throw std::runtime_error("analyze failed");
      return nlohmann::json::parse(an->body);
    };

    // Round trip on a 1024x768 photo (warm-up call excluded).
    analyze_bytes(png_sample(1024, 768, ClassLabel::Positive, 900));
    const std::string big = png_sample(1024, 768, ClassLabel::Negative, 901);
    const auto t0 = Clock::now();
    const auto first = analyze_bytes(big);
    round_trip = since(t0);
    if (round_trip >= kC7RoundTripSeconds) problems += fmt(" round trip %.2fs", round_trip);

    // Identical bytes: identical id and result.
    const auto again = analyze_bytes(big);
    if (again["image_id"] != first["image_id"] || again["result"] != first["result"] ||
        again["bbox"] != first["bbox"]) {
      problems += " re-upload differs";
    }

    // 16 concurrent analyses of distinct images vs a serial baseline.
    std::vector<std::string> ids;
    for (std::size_t k = 0; k < kC7Concurrent; ++k) {
      ids.push_back(svc.upload(png_sample(640, 480, label_from_ordinal(static_cast<int>(k % 3)), 1000 + k),
                               "image/png").image_id);
    }
    std::vector<nlohmann::json> serial;
    for (const auto& id : ids) serial.push_back(to_json(svc.analyze(id)));
    std::vector<std::future<nlohmann::json>> futs;
    for (const auto& id : ids) {
      futs.push_back(std::async(std::launch::async, [&, id] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(300);
        auto an = c.Post("/v1/analyses", nlohmann::json{{"image_id", id}}.dump(), "application/json");
        if (!an || an->status != 200) throw std::runtime_error("concurrent analyze failed");
        return nlohmann::json::parse(an->body);
      }));
    }
    std::size_t matched = 0;
    for (std::size_t k = 0; k < futs.size(); ++k) {
      const auto j = futs[k].get();
      matched += j["status"] == serial[k]["status"] && j["result"] == serial[k]["result"];
    }
    if (matched != kC7Concurrent) problems += fmt(" concurrent %zu/%zu match", matched, kC7Concurrent);
    server.stop();
    th.join();
  }
  // Restart on the same store.
  std::size_t count_before = 0;
  {
    std::ifstream in(store / "records.jsonl");
    std::string line;
    std::set<std::string> ids;
    while (std::getline(in, line)) ids.insert(nlohmann::json::parse(line).at("analysis_id"));
    count_before = ids.size();
  }
  AnalysisService restarted(bundle, store);
  if (restarted.record_count() != count_before) {
    problems += fmt(" restart kept %zu/%zu records", restarted.record_count(), count_before);
  }
  return {problems.empty(),
          fmt("1024x768 round trip %.2fs (< %.0fs), %zu concurrent analyses, %zu records after restart", round_trip,
              kC7RoundTripSeconds, kC7Concurrent, restarted.record_count()) +
              (problems.empty() ? "" : ";" + problems) + note};
}

// ------------------------------------------------------------------ 8

int run_cli(const std::string& lfa, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + lfa + "\" " + args + " >\"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  if (files.size() != count_b) {
    why = "file count differs under " + a.filename().string();
    return false;
  }
  for (const auto& f : files) {
    if (read_file_bytes(a / f) != read_file_bytes(b / f)) {
      why = f.string() + " differs";
      return false;
    }
  }
  return true;
}

Outcome criterion8(const fs::path& work, const std::string& lfa) {
  if (lfa.empty() || !fs::exists(lfa)) return {false, "lfa binary not found (pass --lfa)"};
  const fs::path root = work / "c8";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string n = std::to_string(kC8Images);
  std::vector<std::string> checked;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    const std::string corpus = (d / "corpus").string();
    const std::vector<std::string> steps{
        "gen --out \"" + corpus + "\" --n " + n + " --seed 77 --edge-fraction 0.25",
        "train-detector --corpus \"" + corpus + "\" --out \"" + (d / "models" / "detector.lfam").string() +
            "\" --epochs 2 --batch 8 --seed 3",
        "train-classifier --corpus \"" + corpus + "\" --out-dir \"" + (d / "models").string() +
            "\" --epochs 2 --batch 8 --seed 4 --background-size 8"};
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (run_cli(lfa, steps[i], d.string() + "_" + std::to_string(i) + ".log") != 0) {
        return {false, "command failed: lfa " + steps[i]};
      }
    }
  }
  std::string why;
  const bool corpus_same = same_tree(root / "a" / "corpus", root / "b" / "corpus", why);
  const bool models_same = corpus_same && same_tree(root / "a" / "models", root / "b" / "models", why);
  return {corpus_same && models_same,
          corpus_same && models_same
              ? "gen, train-detector, train-classifier run twice: manifest, images, detector.lfam, "
                "classifier.lfam, background.lfab and histories byte-identical"
              : why};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = "acceptance_work", lfa;
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--lfa", lfa, "Path to the lfa CLI (criterion 8)");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path dir = fs::absolute(work);
  fs::create_directories(dir / "models");

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"Classifier architecture", criterion1},
      {"Gradient correctness", criterion2},
      {"Metric oracle on the reference matrix", criterion3},
      {"End-to-end classifier", [&] { return criterion4(dir); }},
      {"Detector", [&] { return criterion5(dir); }},
      {"Attribution", [&] { return criterion6(dir); }},
      {"Service", [&] { return criterion7(dir); }},
      {"Determinism", [&] { return criterion8(dir, lfa); }}};

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << "  " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
