#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "asn/beamform.hpp"
#include "asn/diarize.hpp"
#include "asn/gss.hpp"
#include "asn/mask_io.hpp"
#include "asn/metrics.hpp"
#include "asn/rttm.hpp"
#include "asn/scene_sim.hpp"
#include "asn/stft.hpp"
#include "asn/sync.hpp"
#include "asn/tdoa.hpp"
#include "asn/wav.hpp"

namespace asn {

using Json = nlohmann::json;

struct StageContext {
  std::string session = "session0";
  std::string out_dir = ".";
  unsigned seed = 1;
  Json cfg = Json::object();
};

// Worker count for session-level parallelism, from ASN_WORKERS (default 1).
inline int worker_count() {
  const char* env = std::getenv("ASN_WORKERS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

namespace detail {

inline std::string artifact(const StageContext& ctx, const std::string& suffix) {
  return ctx.out_dir + "/" + ctx.session + suffix;
}

inline bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

inline void require_artifact(const std::string& path, const std::string& stage,
                             const std::string& producer) {
  if (!file_exists(path))
    throw std::runtime_error(stage + ": missing artifact " + path + " (produced by " + producer +
                             ")");
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

inline Json read_json_file(const std::string& path, const std::string& stage) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(stage + ": cannot open " + path);
  Json j;
  is >> j;
  return j;
}

template <typename T>
T field(const Json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

// Rejection-sampled room layout: devices at least 0.8 m apart, speakers at
// least 1.6 m apart, everything 0.5 m off the walls.
inline void sample_layout(SceneConfig& scene, int num_devices, int num_speakers, unsigned seed) {
  std::mt19937 rng(seed);
  const Point room = scene.room_dims ? *scene.room_dims : Point{6.0, 5.0, 3.0};
  std::uniform_real_distribution<double> ux(0.5, room[0] - 0.5), uy(0.5, room[1] - 0.5);
  std::uniform_real_distribution<double> mic_z(0.9, 1.4), src_z(1.1, 1.7);
  auto place = [&](std::vector<Point>& out, int n, double min_dist, auto& zdist) {
    while (static_cast<int>(out.size()) < n) {
      const Point p{ux(rng), uy(rng), zdist(rng)};
      bool ok = true;
      for (const auto& q : out)
        if (distance(p, q) < min_dist) ok = false;
      if (ok) out.push_back(p);
    }
  };
  place(scene.mic_positions, num_devices, 0.8, mic_z);
  place(scene.source_positions, num_speakers, 1.6, src_z);
}

// Scale each source so its summed 1/d gain over the array matches source 0.
inline void equalize_levels(const SceneConfig& scene, std::vector<std::vector<double>>& sources) {
  std::vector<double> gain(scene.source_positions.size(), 0.0);
  for (std::size_t i = 0; i < scene.source_positions.size(); ++i)
    for (const auto& mic : scene.mic_positions)
      gain[i] += 1.0 / distance(scene.source_positions[i], mic);
  for (std::size_t i = 1; i < sources.size() && i < gain.size(); ++i)
    for (auto& v : sources[i]) v *= gain[0] / gain[i];
}

inline std::string speaker_label(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%02d", i);
  return buf;
}

// First-appearance speaker order of an RTTM document; mirrors rttm_to_activity.
inline std::vector<std::string> rttm_speaker_order(const RttmDocument& doc) {
  std::vector<std::string> order;
  for (const auto& e : doc.entries)
    if (std::find(order.begin(), order.end(), e.speaker) == order.end())
      order.push_back(e.speaker);
  return order;
}

// SI-SDR maximized over small integer alignment shifts; beamformed output is
// anchored to a per-segment reference channel, not to channel 0.
inline double si_sdr_aligned(const std::vector<double>& est, const std::vector<double>& ref,
                             int max_shift = 400) {
  double best = -120.0;
  std::vector<double> shifted(ref.size(), 0.0);
  for (int s = -max_shift; s <= max_shift; s += 4) {
    std::fill(shifted.begin(), shifted.end(), 0.0);
    for (std::size_t n = 0; n < est.size(); ++n) {
      const long long j = static_cast<long long>(n) + s;
      if (j >= 0 && j < static_cast<long long>(shifted.size()))
        shifted[static_cast<std::size_t>(j)] = est[n];
    }
    best = std::max(best, si_sdr(shifted, ref));
  }
  return best;
}

inline std::string read_text(const std::string& path, const std::string& stage) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(stage + ": cannot open transcript " + path);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return all;
}

}  // namespace detail

// Thin path-based loader for pre-recorded device WAVs (e.g. LibriWASN): each
// file contributes its channels in order; lengths may differ across devices.
inline MultichannelRecording load_device_wavs(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::invalid_argument("load_device_wavs: no paths");
  MultichannelRecording rec;
  rec.channels.clear();
  rec.device_ids.clear();
  for (const auto& p : paths) {
    auto one = load_wav(p);
    if (rec.channels.empty()) rec.sample_rate_hz = one.sample_rate_hz;
    if (one.sample_rate_hz != rec.sample_rate_hz)
      throw std::runtime_error("load_device_wavs: sample rate mismatch in " + p);
    for (auto& ch : one.channels) {
      rec.channels.push_back(std::move(ch));
      rec.device_ids.push_back(p);
    }
  }
  return rec;
}

inline Json run_simulate(const StageContext& ctx) {
  const Json sc = detail::field(ctx.cfg, "scene", Json::object());
  const int num_devices = detail::field(sc, "num_devices", 4);
  const int num_speakers = detail::field(sc, "num_speakers", 4);
  const double duration_s = detail::field(sc, "duration_s", 60.0);
  const double overlap = detail::field(sc, "overlap_ratio", 0.0);

  SceneConfig scene;
  scene.seed = ctx.seed;
  scene.snr_db = detail::field(sc, "snr_db", 20.0);
  scene.t60_s = detail::field(sc, "t60_s", 0.0);
  scene.duration_s = duration_s;
  if (sc.contains("room")) {
    const auto r = sc.at("room").get<std::vector<double>>();
    if (r.size() != 3) throw std::invalid_argument("simulate: room needs three dimensions");
    scene.room_dims = Point{r[0], r[1], r[2]};
  } else {
    scene.room_dims = Point{6.0, 5.0, 3.0};
  }
  detail::sample_layout(scene, num_devices, num_speakers, ctx.seed);
  if (sc.contains("sto_samples"))
    scene.per_device_sto_samples = sc.at("sto_samples").get<std::vector<int>>();
  if (sc.contains("sro_ppm"))
    scene.per_device_sro_ppm = sc.at("sro_ppm").get<std::vector<double>>();
  scene.utterance_plan = make_meeting_plan(num_speakers, duration_s, overlap, ctx.seed + 1,
                                           detail::field(sc, "utterance_s", 2.5));

  std::vector<std::vector<double>> sources;
  const auto n = static_cast<std::size_t>(duration_s * scene.sample_rate_hz);
  for (int i = 0; i < num_speakers; ++i)
    sources.push_back(speech_like_signal(n, ctx.seed + 100 + i));
  detail::equalize_levels(scene, sources);

  auto [rec, gt] = simulate_scene(scene, sources);

  Json report;
  report["session"] = ctx.session;
  report["sample_rate_hz"] = rec.sample_rate_hz;
  report["device_wavs"] = Json::array();
  for (int d = 0; d < rec.num_channels(); ++d) {
    const std::string path = detail::artifact(ctx, "_dev" + std::to_string(d) + ".wav");
    write_wav(path, {rec.channels[d]}, rec.sample_rate_hz);
    report["device_wavs"].push_back(path);
  }
  const std::string ref_rttm = detail::artifact(ctx, "_ref.rttm");
  write_rttm(ref_rttm, activity_to_rttm(gt.activity, ctx.session));
  report["ref_rttm"] = ref_rttm;
  report["clean_wavs"] = Json::array();
  for (int i = 0; i < num_speakers; ++i) {
    const std::string path = detail::artifact(ctx, "_clean_" + detail::speaker_label(i) + ".wav");
    write_wav(path, {gt.clean_sources[i]}, rec.sample_rate_hz);
    report["clean_wavs"].push_back(path);
  }
  report["true_tdoa_vectors"] = gt.true_tdoa_vectors;
  report["sto_samples"] = scene.per_device_sto_samples;
  report["sro_ppm"] = scene.per_device_sro_ppm;
  report["frame_shift_s"] = gt.activity.frame_shift_s;
  report["seed"] = ctx.seed;
  detail::write_json_file(detail::artifact(ctx, "_simulate.json"), report);
  return report;
}

inline Json run_sync(const StageContext& ctx) {
  std::vector<std::string> paths;
  if (ctx.cfg.contains("devices")) {
    paths = ctx.cfg.at("devices").get<std::vector<std::string>>();
  } else {
    const std::string sim = detail::artifact(ctx, "_simulate.json");
    detail::require_artifact(sim, "sync", "simulate (or list device WAVs under \"devices\")");
    const Json sj = detail::read_json_file(sim, "sync");
    for (const auto& p : sj.at("device_wavs")) paths.push_back(p.get<std::string>());
  }
  auto rec = load_device_wavs(paths);

  const Json scfg = detail::field(ctx.cfg, "sync", Json::object());
  Json report;
  report["session"] = ctx.session;
  if (detail::field(scfg, "skip", false) || rec.num_channels() < 2) {
    const std::size_t len = rec.min_length();
    for (auto& ch : rec.channels) ch.resize(len);
    report["skipped"] = true;
    report["sto_samples"] = std::vector<int>(rec.num_channels(), 0);
    report["sro_ppm"] = std::vector<double>(rec.num_channels(), 0.0);
  } else {
    SyncConfig sync_cfg;
    sync_cfg.reference_channel = detail::field(scfg, "reference_channel", 0);
    auto [aligned, sr] = synchronize(rec, sync_cfg);
    rec = std::move(aligned);
    report["skipped"] = false;
    report["reference_channel"] = sr.reference_channel;
    report["sto_samples"] = sr.sto_samples;
    report["sro_ppm"] = sr.sro_ppm;
  }
  const std::size_t len = rec.min_length();
  for (auto& ch : rec.channels) ch.resize(len);
  const std::string out = detail::artifact(ctx, "_synced.wav");
  write_wav(out, rec.channels, rec.sample_rate_hz);
  report["synced_wav"] = out;
  detail::write_json_file(detail::artifact(ctx, "_sync.json"), report);
  return report;
}

inline Json run_tdoa(const StageContext& ctx) {
  const std::string synced = detail::artifact(ctx, "_synced.wav");
  detail::require_artifact(synced, "tdoa", "sync");
  const auto rec = load_wav(synced);

  TdoaEstConfig tcfg;
  const Json tj = detail::field(ctx.cfg, "tdoa", Json::object());
  tcfg.band_low_hz = detail::field(tj, "band_low_hz", tcfg.band_low_hz);
  tcfg.band_high_hz = detail::field(tj, "band_high_hz", tcfg.band_high_hz);
  tcfg.max_peaks = detail::field(tj, "max_peaks", tcfg.max_peaks);
  tcfg.tau_th = detail::field(tj, "tau_th", tcfg.tau_th);
  tcfg.lag_max = detail::field(tj, "lag_max", tcfg.lag_max);
  tcfg.validate(rec.sample_rate_hz);

  const StftConfig grid;
  const auto S = stft(rec, grid);
  const auto g = gcc_phat(S, tcfg);
  const auto per_frame = estimate_frame_tdoas(S, tcfg, g);
  const auto vad = energy_vad(rec.channels, grid, tcfg.vad_margin_db);
  const auto sel = select_frame_tdoas(per_frame, vad);

  const std::string dump = detail::artifact(ctx, "_tdoa.jsonl");
  std::ofstream os(dump);
  if (!os) throw std::runtime_error("tdoa: cannot open " + dump);
  std::size_t with_vectors = 0;
  for (std::size_t l = 0; l < sel.size(); ++l) {
    Json line;
    line["frame"] = l;
    line["vectors"] = Json::array();
    for (const auto& v : sel[l]) line["vectors"].push_back({{"tau", v.tau}, {"srp", v.srp}});
    if (!sel[l].empty()) ++with_vectors;
    os << line.dump() << '\n';
  }
  if (!os) throw std::runtime_error("tdoa: short write to " + dump);

  Json report;
  report["session"] = ctx.session;
  report["tdoa_jsonl"] = dump;
  report["num_frames"] = S.num_frames;
  report["num_channels"] = S.num_channels;
  report["frame_shift_s"] = grid.frame_shift_s(rec.sample_rate_hz);
  report["frames_with_vectors"] = with_vectors;
  detail::write_json_file(detail::artifact(ctx, "_tdoa.json"), report);
  return report;
}

inline Json run_diarize(const StageContext& ctx) {
  const std::string dump = detail::artifact(ctx, "_tdoa.jsonl");
  const std::string treport = detail::artifact(ctx, "_tdoa.json");
  detail::require_artifact(dump, "diarize", "tdoa");
  detail::require_artifact(treport, "diarize", "tdoa");
  const Json tj = detail::read_json_file(treport, "diarize");
  const double frame_shift_s = tj.at("frame_shift_s").get<double>();
  const int num_frames = tj.at("num_frames").get<int>();

  std::vector<std::vector<TdoaVector>> per_frame(num_frames);
  std::ifstream is(dump);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    const int l = j.at("frame").get<int>();
    if (l < 0 || l >= num_frames) throw std::runtime_error("diarize: frame index out of range");
    for (const auto& v : j.at("vectors")) {
      TdoaVector tv;
      tv.tau = v.at("tau").get<std::vector<double>>();
      tv.srp = v.at("srp").get<double>();
      tv.frame = l;
      per_frame[l].push_back(std::move(tv));
    }
  }

  const auto result = diarize(per_frame, frame_shift_s);

  const std::string hyp = detail::artifact(ctx, "_hyp.rttm");
  write_rttm(hyp, activity_to_rttm(result.activity, ctx.session));
  Json report;
  report["session"] = ctx.session;
  report["hyp_rttm"] = hyp;
  report["num_speakers"] = result.activity.num_speakers;
  report["frame_shift_s"] = frame_shift_s;
  report["num_frames"] = num_frames;
  report["speakers"] = Json::array();
  for (int i = 0; i < result.activity.num_speakers; ++i)
    report["speakers"].push_back({{"label", detail::speaker_label(i)},
                                  {"representative", result.representatives[i]}});
  detail::write_json_file(detail::artifact(ctx, "_diarize.json"), report);
  return report;
}

inline Json run_enhance(const StageContext& ctx) {
  const std::string synced = detail::artifact(ctx, "_synced.wav");
  const std::string hyp = detail::artifact(ctx, "_hyp.rttm");
  const std::string dreport = detail::artifact(ctx, "_diarize.json");
  detail::require_artifact(synced, "enhance", "sync");
  detail::require_artifact(hyp, "enhance", "diarize");
  detail::require_artifact(dreport, "enhance", "diarize");

  const auto rec = load_wav(synced);
  const StftConfig grid;
  const auto S = stft(rec, grid);
  const auto doc = read_rttm(hyp);
  const auto order = detail::rttm_speaker_order(doc);
  const auto activity = rttm_to_activity(doc, grid.frame_shift_s(rec.sample_rate_hz), S.num_frames);

  const Json dj = detail::read_json_file(dreport, "enhance");
  std::vector<std::vector<double>> reps(order.size());
  for (const auto& sp : dj.at("speakers")) {
    const auto it = std::find(order.begin(), order.end(), sp.at("label").get<std::string>());
    if (it != order.end())
      reps[it - order.begin()] = sp.at("representative").get<std::vector<double>>();
  }

  Json report;
  report["session"] = ctx.session;
  report["enhanced_wavs"] = Json::array();
  report["segments"] = Json::array();
  if (activity.num_speakers == 0) {
    report["num_speakers"] = 0;
    detail::write_json_file(detail::artifact(ctx, "_enhance.json"), report);
    return report;
  }

  GssConfig gss_cfg;
  const Json gj = detail::field(ctx.cfg, "gss", Json::object());
  gss_cfg.n_guided = detail::field(gj, "n_guided", gss_cfg.n_guided);
  gss_cfg.n_unguided = detail::field(gj, "n_unguided", gss_cfg.n_unguided);
  gss_cfg.context_s = detail::field(gj, "context_s", gss_cfg.context_s);
  const std::string init = detail::field(gj, "init", std::string("tf"));
  if (init != "tf" && init != "t") throw std::invalid_argument("enhance: gss.init must be tf or t");
  gss_cfg.init = init == "tf" ? GssInit::kTfInit : GssInit::kTInit;
  if (gss_cfg.init == GssInit::kTfInit) {
    const auto need = static_cast<std::size_t>(num_pairs(S.num_channels));
    for (std::size_t i = 0; i < reps.size(); ++i)
      if (reps[i].size() != need)
        throw std::runtime_error("enhance: no TDOA representative for " + order[i] +
                                 " in " + dreport);
  }

  const auto masks = run_gss(S, activity, reps, 0, S.num_frames, gss_cfg);
  const std::string mask_path = detail::artifact(ctx, ".masks");
  write_masks(mask_path, masks);
  report["masks"] = mask_path;
  report["num_speakers"] = activity.num_speakers;

  const auto plan = resegment(masks);
  const double shift_s = grid.frame_shift_s(rec.sample_rate_hz);
  for (int i = 0; i < activity.num_speakers; ++i) {
    std::vector<SegmentTrace> trace;
    const auto out = extract_speaker(S, masks, plan, i, rec.min_length(), &trace);
    const std::string path = detail::artifact(ctx, "_" + order[i] + ".wav");
    write_wav(path, {out}, rec.sample_rate_hz);
    report["enhanced_wavs"].push_back(path);
    for (const auto& t : trace)
      report["segments"].push_back({{"speaker", order[i]},
                                    {"start_s", t.begin * shift_s},
                                    {"end_s", t.end * shift_s},
                                    {"ref_channel", t.ref_channel}});
  }
  detail::write_json_file(detail::artifact(ctx, "_enhance.json"), report);
  return report;
}

inline Json run_eval(const StageContext& ctx) {
  const std::string ref_path = detail::artifact(ctx, "_ref.rttm");
  const std::string hyp_path = detail::artifact(ctx, "_hyp.rttm");
  detail::require_artifact(ref_path, "eval", "simulate (or place a reference RTTM there)");
  detail::require_artifact(hyp_path, "eval", "diarize");
  const auto ref_doc = read_rttm(ref_path);
  const auto hyp_doc = read_rttm(hyp_path);

  double end_s = 0.0;
  for (const auto& e : ref_doc.entries) end_s = std::max(end_s, e.onset_s + e.duration_s);
  for (const auto& e : hyp_doc.entries) end_s = std::max(end_s, e.onset_s + e.duration_s);
  const double shift_s = StftConfig{}.frame_shift_s(16000);
  const int num_frames = static_cast<int>(std::ceil(end_s / shift_s)) + 1;
  const auto ref_act = rttm_to_activity(ref_doc, shift_s, num_frames);
  const auto hyp_act = rttm_to_activity(hyp_doc, shift_s, num_frames);
  const double collar_s = detail::field(detail::field(ctx.cfg, "eval", Json::object()),
                                        "collar_s", 0.25);
  const auto der = compute_der(ref_act, hyp_act, collar_s);

  Json report;
  report["session"] = ctx.session;
  report["der"] = der.der;
  report["miss"] = der.miss;
  report["false_alarm"] = der.false_alarm;
  report["confusion"] = der.confusion;
  report["scored_speech_s"] = der.scored_speech_s;

  // SI-SDR block only when both clean references and enhanced tracks exist
  const std::string sim = detail::artifact(ctx, "_simulate.json");
  const std::string enh = detail::artifact(ctx, "_enhance.json");
  if (detail::file_exists(sim) && detail::file_exists(enh)) {
    const Json sj = detail::read_json_file(sim, "eval");
    const Json ej = detail::read_json_file(enh, "eval");
    std::vector<std::vector<double>> clean, tracks;
    for (const auto& p : sj.at("clean_wavs"))
      clean.push_back(load_wav(p.get<std::string>()).channels.front());
    for (const auto& p : ej.at("enhanced_wavs"))
      tracks.push_back(load_wav(p.get<std::string>()).channels.front());
    const auto synced = load_wav(detail::artifact(ctx, "_synced.wav"));
    Json block = Json::array();
    for (std::size_t i = 0; i < clean.size(); ++i) {
      double best_enh = -120.0;
      for (const auto& t : tracks) best_enh = std::max(best_enh, detail::si_sdr_aligned(t, clean[i]));
      double best_raw = -120.0;
      for (const auto& ch : synced.channels)
        best_raw = std::max(best_raw, detail::si_sdr_aligned(ch, clean[i]));
      block.push_back({{"speaker", detail::speaker_label(static_cast<int>(i))},
                       {"si_sdr_enhanced_db", best_enh},
                       {"si_sdr_best_raw_db", best_raw},
                       {"improvement_db", best_enh - best_raw}});
    }
    report["si_sdr"] = block;
  }

  const Json tr = detail::field(ctx.cfg, "transcripts", Json::object());
  if (tr.contains("ref") && tr.contains("hyp")) {
    auto gather = [&](const Json& arr) {
      std::vector<std::string> out;
      for (const auto& e : arr)
        out.push_back(e.is_string() && detail::file_exists(e.get<std::string>())
                          ? detail::read_text(e.get<std::string>(), "eval")
                          : e.get<std::string>());
      return out;
    };
    report["cp_wer"] = cp_wer(gather(tr.at("ref")), gather(tr.at("hyp")));
  }

  detail::write_json_file(detail::artifact(ctx, "_eval.json"), report);
  return report;
}

// The six stages in order; simulate is skipped when the config lists
// pre-recorded device WAVs.
inline Json run_pipeline(const StageContext& ctx) {
  Json report;
  report["session"] = ctx.session;
  if (!ctx.cfg.contains("devices")) report["simulate"] = run_simulate(ctx);
  report["sync"] = run_sync(ctx);
  report["tdoa"] = run_tdoa(ctx);
  report["diarize"] = run_diarize(ctx);
  report["enhance"] = run_enhance(ctx);
  report["eval"] = run_eval(ctx);
  return report;
}

inline Json run_stage(const StageContext& ctx, const std::string& stage) {
  if (stage == "simulate") return run_simulate(ctx);
  if (stage == "sync") return run_sync(ctx);
  if (stage == "tdoa") return run_tdoa(ctx);
  if (stage == "diarize") return run_diarize(ctx);
  if (stage == "enhance") return run_enhance(ctx);
  if (stage == "eval") return run_eval(ctx);
  if (stage == "pipeline") return run_pipeline(ctx);
  throw std::invalid_argument("unknown stage " + stage);
}

// A config with a "sessions" array fans out across ASN_WORKERS threads; a
// plain object is a single session.
inline std::vector<StageContext> make_contexts(const Json& root, const std::string& out_dir,
                                               unsigned seed) {
  std::vector<StageContext> contexts;
  if (root.contains("sessions")) {
    unsigned idx = 0;
    for (const auto& sc : root.at("sessions")) {
      StageContext ctx;
      ctx.cfg = sc;
      ctx.session = detail::field(sc, "session", "session" + std::to_string(idx));
      ctx.out_dir = out_dir;
      ctx.seed = detail::field(sc, "seed", seed + idx);
      contexts.push_back(std::move(ctx));
      ++idx;
    }
  } else {
    StageContext ctx;
    ctx.cfg = root;
    ctx.session = detail::field(root, "session", std::string("session0"));
    ctx.out_dir = out_dir;
    ctx.seed = detail::field(root, "seed", seed);
    contexts.push_back(std::move(ctx));
  }
  return contexts;
}

inline std::vector<Json> run_sessions(const Json& root, const std::string& out_dir, unsigned seed,
                                      const std::string& stage = "pipeline") {
  const auto contexts = make_contexts(root, out_dir, seed);
  std::vector<Json> reports(contexts.size());
  std::vector<std::string> errors(contexts.size());
  const int workers = std::min<int>(worker_count(), static_cast<int>(contexts.size()));
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < contexts.size(); i = next.fetch_add(1)) {
        try {
          reports[i] = run_pipeline(contexts[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < contexts.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("session " + contexts[i].session + ": " + errors[i]);
  return reports;
}

}  // namespace asn
