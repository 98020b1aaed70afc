#include "coetal/cli.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "coetal/io.hpp"

namespace coetal::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using config::ConfigError;
using config::RunConfig;

namespace {

struct ExistsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_fresh(const fs::path& p, bool overwrite) {
    if (!fs::exists(p)) return;
    if (!overwrite) throw ExistsError("output exists (pass --overwrite): " + p.string());
    fs::remove_all(p);
}

int guarded(const char* name, const std::function<void()>& body) {
    try {
        body();
        return exit_ok;
    } catch (const ExistsError& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return exit_exists;
    } catch (const ConfigError& e) {
        std::cerr << name << ": config error: " << e.what() << "\n";
        return exit_config;
    } catch (const datapack::NoEligibleClassError& e) {
        std::cerr << name << ": config error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::invalid_argument& e) {
        std::cerr << name << ": config error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return exit_io;
    }
}

json meta_block(const RunConfig& cfg) {
    return json{{"config_hash", cfg.hash}, {"seed", cfg.seed}};
}

fs::path resolve_out(const RunConfig& cfg, const CommonFlags& flags, const char* sub) {
    return flags.out ? fs::path(*flags.out) : fs::path(cfg.out_dir) / sub;
}

fs::path default_manifest(const RunConfig& cfg) {
    return fs::path(cfg.out_dir) / "data" / "manifest.json";
}

std::vector<datapack::Episode> sample_eval_episodes(const datapack::DatasetManifest& manifest,
                                                    datapack::Split split, int count, int shots,
                                                    int t_snippets, Rng& rng) {
    std::vector<datapack::Episode> episodes;
    episodes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        episodes.push_back(datapack::sample_episode(manifest, split, shots, t_snippets, rng));
    return episodes;
}

// ---- tiny SVG charts ----------------------------------------------------

struct Series {
    std::string label;
    std::vector<double> xs, ys;
};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

const char* series_color(size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf"};
    return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

void write_line_chart(const fs::path& path, const std::string& title,
                      const std::vector<Series>& series, const json& meta) {
    const double w = 640, h = 400, ml = 60, mr = 20, mt = 40, mb = 40;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series) {
        for (double x : s.xs) { xmin = std::min(xmin, x); xmax = std::max(xmax, x); }
        for (double y : s.ys) { ymin = std::min(ymin, y); ymax = std::max(ymax, y); }
    }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    const auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ostringstream out;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    out << "<desc>" << svg_escape(meta.dump()) << "</desc>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>"
        << svg_escape(title) << "</text>\n";
    out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
        << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
        << "' stroke='black'/>\n";
    out << "<text x='" << ml << "' y='" << h - mb + 16 << "' font-size='11'>" << xmin
        << "</text>\n";
    out << "<text x='" << w - mr - 20 << "' y='" << h - mb + 16 << "' font-size='11'>" << xmax
        << "</text>\n";
    out << "<text x='4' y='" << py(ymin) << "' font-size='11'>" << ymin << "</text>\n";
    out << "<text x='4' y='" << py(ymax) << "' font-size='11'>" << ymax << "</text>\n";
    for (size_t i = 0; i < series.size(); ++i) {
        const Series& s = series[i];
        out << "<polyline fill='none' stroke='" << series_color(i) << "' stroke-width='1.5' points='";
        for (size_t j = 0; j < s.xs.size(); ++j)
            out << px(s.xs[j]) << "," << py(s.ys[j]) << " ";
        out << "'/>\n";
        out << "<text x='" << w - mr - 150 << "' y='" << mt + 16 * (i + 1) << "' fill='"
            << series_color(i) << "' font-size='12'>" << svg_escape(s.label) << "</text>\n";
    }
    out << "</svg>\n";
    io::write_text_file(path, out.str());
}

void write_bar_chart(const fs::path& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values,
                     const json& meta) {
    const double w = 640, h = 400, ml = 60, mr = 20, mt = 40, mb = 60;
    double ymax = 0.0;
    for (double v : values) ymax = std::max(ymax, v);
    if (ymax <= 0.0) ymax = 1.0;
    const double band = (w - ml - mr) / std::max<size_t>(1, values.size());

    std::ostringstream out;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    out << "<desc>" << svg_escape(meta.dump()) << "</desc>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>"
        << svg_escape(title) << "</text>\n";
    out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
        << "' stroke='black'/>\n";
    for (size_t i = 0; i < values.size(); ++i) {
        const double bh = values[i] / ymax * (h - mt - mb);
        const double x = ml + band * i + band * 0.15;
        out << "<rect x='" << x << "' y='" << h - mb - bh << "' width='" << band * 0.7
            << "' height='" << bh << "' fill='" << series_color(i) << "'/>\n";
        out << "<text x='" << x + band * 0.35 << "' y='" << h - mb + 16
            << "' text-anchor='middle' font-size='11'>" << svg_escape(labels[i]) << "</text>\n";
        std::ostringstream val;
        val.precision(3);
        val << values[i];
        out << "<text x='" << x + band * 0.35 << "' y='" << h - mb - bh - 4
            << "' text-anchor='middle' font-size='11'>" << val.str() << "</text>\n";
    }
    out << "</svg>\n";
    io::write_text_file(path, out.str());
}

} // namespace

void apply_overrides(RunConfig& cfg, const CommonFlags& flags) {
    if (flags.seed) {
        cfg.seed = *flags.seed;
        cfg.train.seed = *flags.seed;
    }
    if (flags.shots) cfg.train.shots = *flags.shots;
    if (flags.t_snippets) {
        cfg.synth.t_snippets = *flags.t_snippets;
        cfg.train.t_snippets = *flags.t_snippets;
    }
}

std::vector<FramePayload> frames_for_record(const datapack::VideoRecord& record, double fps) {
    if (!(fps > 0.0)) throw std::invalid_argument("frames_for_record: fps must be > 0");
    const double duration = record.features.duration_s;
    const int t = record.features.t();
    std::vector<FramePayload> frames;
    for (int i = 0;; ++i) {
        const double at = (i + 0.5) / fps;
        if (at >= duration) break;
        FramePayload f;
        f.id = record.video_id + "#" + std::to_string(i);
        if (record.texts) {
            const int snippet = std::min(t - 1, static_cast<int>(at / duration * t));
            f.data = record.texts->captions[static_cast<size_t>(snippet)];
        } else {
            bool fg = false;
            for (const datapack::Interval& iv : record.annotations.intervals)
                fg = fg || (at >= iv.t_s && at < iv.t_e);
            f.data = "video " + record.video_id + " frame " + std::to_string(i) + ": " +
                     (fg ? "an action is underway" : "an uneventful background moment");
        }
        frames.push_back(std::move(f));
    }
    if (frames.empty())
        frames.push_back({record.video_id + "#0", "video " + record.video_id + " single frame"});
    return frames;
}

int cmd_synth(const RunConfig& cfg, const CommonFlags& flags) {
    return guarded("synth", [&] {
        const fs::path out = resolve_out(cfg, flags, "data");
        require_fresh(out, flags.overwrite);
        datapack::make_synthetic_dataset(cfg.synth, cfg.seed, out, meta_block(cfg));
        if (!flags.quiet) std::cout << "synth: wrote " << (out / "manifest.json").string() << "\n";
    });
}

int cmd_train(const RunConfig& cfg, const CommonFlags& flags,
              const std::optional<std::string>& manifest_path) {
    return guarded("train", [&] {
        const fs::path manifest_file =
            manifest_path ? fs::path(*manifest_path) : default_manifest(cfg);
        const fs::path out = resolve_out(cfg, flags, "train");
        require_fresh(out, flags.overwrite);

        datapack::DatasetManifest manifest = datapack::load_manifest(manifest_file);
        auto provider = config::make_provider(cfg);
        fs::create_directories(out);
        const fs::path metrics_path = out / "metrics.jsonl";

        learn::ModelConfig model_cfg = cfg.model_config();
        learn::TrainResult result = learn::train(
            manifest, model_cfg, cfg.train, cfg.loss, *provider, cfg.forward_options(),
            [&](const learn::EpochMetrics& em) {
                json line{{"epoch", em.epoch},
                          {"loss", em.mean_loss},
                          {"val_map", em.val_map ? json(*em.val_map) : json(nullptr)},
                          {"config_hash", cfg.hash},
                          {"seed", cfg.seed}};
                io::append_jsonl(metrics_path, line);
                if (!flags.quiet) {
                    std::cout << "epoch " << em.epoch << " loss " << em.mean_loss;
                    if (em.val_map) std::cout << " val_map@0.5 " << *em.val_map;
                    std::cout << "\n";
                }
            });

        const int steps_per_epoch =
            (cfg.train.episodes_per_epoch + cfg.train.batch_size - 1) / cfg.train.batch_size;
        json header{{"step", cfg.train.epochs * steps_per_epoch},
                    {"seed", cfg.seed},
                    {"config_hash", cfg.hash},
                    {"shots", cfg.train.shots},
                    {"t_snippets", cfg.train.t_snippets}};
        learn::save_checkpoint(result.params, out / "checkpoint", header);
        if (!flags.quiet) std::cout << "train: wrote " << (out / "checkpoint").string() << "\n";
    });
}

int cmd_eval(const RunConfig& cfg, const CommonFlags& flags, const EvalFlags& eval) {
    return guarded("eval", [&] {
        if (eval.oracle_probs && eval.zero_probs)
            throw ConfigError("--oracle-probs and --zero-probs are mutually exclusive");
        const fs::path manifest_file =
            eval.manifest ? fs::path(*eval.manifest) : default_manifest(cfg);
        const fs::path out = resolve_out(cfg, flags, "eval");
        require_fresh(out, flags.overwrite);

        datapack::DatasetManifest manifest = datapack::load_manifest(manifest_file);
        const datapack::Split split = datapack::split_from_name(eval.split);
        Rng rng(cfg.seed);
        Rng episode_rng = rng.child("eval-episodes");
        std::vector<datapack::Episode> episodes =
            sample_eval_episodes(manifest, split, eval.episodes, cfg.train.shots,
                                 cfg.train.t_snippets, episode_rng);

        locate::ProbeFn probe;
        std::unique_ptr<EmbeddingProvider> provider;
        learn::ModelParams params;
        if (eval.oracle_probs) {
            probe = [](const datapack::Episode& ep) { return ep.query_mask; };
        } else if (eval.zero_probs) {
            probe = [](const datapack::Episode& ep) { return Vec(Vec::Zero(ep.t())); };
        } else {
            const fs::path ckpt = eval.checkpoint
                                      ? fs::path(*eval.checkpoint)
                                      : fs::path(cfg.out_dir) / "train" / "checkpoint";
            if (!fs::exists(ckpt / "header.json"))
                throw ConfigError("checkpoint not found: " + ckpt.string());
            params = learn::load_checkpoint(ckpt);
            if (params.cfg.shots != cfg.train.shots)
                throw ConfigError("checkpoint was trained with shots=" +
                                  std::to_string(params.cfg.shots) + ", requested " +
                                  std::to_string(cfg.train.shots));
            provider = config::make_provider(cfg);
            const learn::ForwardOptions options = cfg.forward_options();
            probe = [&params, &provider, options](const datapack::Episode& ep) {
                return learn::model_probs_values(params, ep, *provider, options);
            };
        }

        fs::create_directories(out);
        const fs::path dump = out / "proposals.jsonl";
        locate::EvalReport report = locate::evaluate(episodes, probe, cfg.eval, dump);

        json rep;
        rep["map_at"] = json::object();
        for (const auto& [iou, v] : report.map_at) {
            std::ostringstream key;
            key.precision(2);
            key << std::fixed << iou;
            rep["map_at"][key.str()] = v;
        }
        rep["mean_map"] = report.mean_map;
        rep["episodes"] = eval.episodes;
        rep["split"] = eval.split;
        rep["shots"] = cfg.train.shots;
        rep["config_hash"] = cfg.hash;
        rep["seed"] = cfg.seed;
        io::write_text_file(out / "report.json", rep.dump(2) + "\n");
        std::cout << "eval: mAP@0.50 = " << report.map_at.begin()->second
                  << ", mean mAP = " << report.mean_map << "\n";
    });
}

int cmd_gentext(const RunConfig& cfg, const CommonFlags& flags,
                const std::optional<std::string>& manifest_path) {
    return guarded("gentext", [&] {
        const fs::path manifest_file =
            manifest_path ? fs::path(*manifest_path) : default_manifest(cfg);
        const fs::path out = resolve_out(cfg, flags, "gentext");
        require_fresh(out, flags.overwrite);

        datapack::DatasetManifest manifest = datapack::load_manifest(manifest_file);
        auto provider = config::make_provider(cfg);
        auto vlm = config::make_chat_client(cfg.vlm, coegen::ClientRole::vlm);
        auto llm = config::make_chat_client(cfg.llm, coegen::ClientRole::llm);

        fs::create_directories(out);
        coegen::HumanReviewQueue queue(out / "review_queue.jsonl");

        int accepted = 0;
        for (datapack::VideoRecord& record : manifest.records) {
            const std::vector<FramePayload> frames = frames_for_record(record, cfg.verify.fps);
            coegen::PipelineResult result =
                coegen::generate_and_verify(record.video_id, frames, *vlm, *llm, cfg.prompts,
                                            *provider, cfg.verify, queue);
            if (result.report.disposition == coegen::Disposition::human_review) continue;
            ++accepted;

            datapack::TextBundle bundle;
            if (record.texts) {
                bundle.captions = record.texts->captions;
            } else {
                for (int i = 0; i < record.features.t(); ++i) {
                    coegen::Stage caption_stage{
                        1, "Describe snippet " + std::to_string(i) + " of the video in one sentence.",
                        {}};
                    bundle.captions.push_back(
                        coegen::run_stage(caption_stage, *vlm, &frames));
                }
            }
            for (const coegen::CoEElement& el : result.document.elements)
                bundle.coe_sentences.push_back(el.text);
            record.texts = std::move(bundle);
        }

        datapack::write_manifest(manifest, out / "manifest.json", meta_block(cfg));
        if (!fs::exists(out / "review_queue.jsonl"))
            io::write_text_file(out / "review_queue.jsonl", "");
        std::cout << "gentext: " << accepted << "/" << manifest.records.size()
                  << " videos accepted, queue size " << queue.size() << "\n";
    });
}

int cmd_verify(const RunConfig& cfg, const CommonFlags& flags,
               const std::optional<std::string>& manifest_path) {
    return guarded("verify", [&] {
        const fs::path manifest_file =
            manifest_path ? fs::path(*manifest_path) : default_manifest(cfg);
        const fs::path out = resolve_out(cfg, flags, "verify");
        require_fresh(out, flags.overwrite);

        datapack::DatasetManifest manifest = datapack::load_manifest(manifest_file);
        auto provider = config::make_provider(cfg);
        fs::create_directories(out);
        const fs::path report_path = out / "verify_report.jsonl";

        int checked = 0, passed = 0;
        for (const datapack::VideoRecord& record : manifest.records) {
            if (!record.texts) continue;
            ++checked;
            std::string joined;
            for (const std::string& s : record.texts->coe_sentences) joined += s + ". ";
            const std::vector<FramePayload> frames = frames_for_record(record, cfg.verify.fps);
            const std::vector<std::string> subs = coegen::parse_sub_sentences(joined);
            const auto scores = coegen::consistency_scores(subs, frames, *provider, cfg.verify);
            bool pass = true;
            json items = json::array();
            for (const auto& s : scores) {
                pass = pass && !s.flagged;
                items.push_back({{"text", s.text}, {"score", s.score}, {"flagged", s.flagged}});
            }
            if (pass) ++passed;
            io::append_jsonl(report_path, json{{"video_id", record.video_id},
                                               {"pass", pass},
                                               {"scores", items},
                                               {"config_hash", cfg.hash},
                                               {"seed", cfg.seed}});
        }
        std::cout << "verify: " << passed << "/" << checked << " texts pass at alpha "
                  << cfg.verify.alpha << "\n";
    });
}

int cmd_plot(const RunConfig& cfg, const CommonFlags& flags,
             const std::vector<std::string>& metric_files) {
    return guarded("plot", [&] {
        if (metric_files.empty()) throw ConfigError("plot: no metric files given");
        const fs::path out = resolve_out(cfg, flags, "plots");
        require_fresh(out, flags.overwrite);
        fs::create_directories(out);

        std::vector<Series> loss_series, val_series;
        std::vector<std::string> bar_labels;
        std::vector<double> bar_values;
        for (const std::string& file : metric_files) {
            const fs::path p(file);
            if (p.extension() == ".jsonl") {
                Series loss{p.stem().string(), {}, {}};
                Series val{p.stem().string(), {}, {}};
                for (const json& line : io::read_jsonl(p)) {
                    loss.xs.push_back(line.at("epoch").get<double>());
                    loss.ys.push_back(line.at("loss").get<double>());
                    if (line.contains("val_map") && !line.at("val_map").is_null()) {
                        val.xs.push_back(line.at("epoch").get<double>());
                        val.ys.push_back(line.at("val_map").get<double>());
                    }
                }
                if (!loss.xs.empty()) loss_series.push_back(std::move(loss));
                if (!val.xs.empty()) val_series.push_back(std::move(val));
            } else {
                const json rep = io::parse_json_file(p);
                if (!rep.contains("map_at")) throw ConfigError("plot: unrecognized report " + file);
                const int shots = rep.contains("shots") ? rep.at("shots").get<int>() : 0;
                bar_labels.push_back(std::to_string(shots) + "-shot");
                bar_values.push_back(rep.at("map_at").begin().value().get<double>());
            }
        }

        const json meta = meta_block(cfg);
        int written = 0;
        if (!loss_series.empty()) {
            write_line_chart(out / "loss.svg", "training loss", loss_series, meta);
            ++written;
        }
        if (!val_series.empty()) {
            write_line_chart(out / "val_map.svg", "validation mAP@0.5", val_series, meta);
            ++written;
        }
        if (!bar_values.empty()) {
            write_bar_chart(out / "map_by_shot.svg", "mAP@0.5 by shots", bar_labels, bar_values,
                            meta);
            ++written;
        }
        std::cout << "plot: wrote " << written << " chart(s) to " << out.string() << "\n";
    });
}

int cmd_calibrate(const RunConfig& cfg, const CommonFlags& flags, const std::string& labeled_path) {
    return guarded("calibrate", [&] {
        const fs::path out = resolve_out(cfg, flags, "calibrate");
        require_fresh(out, flags.overwrite);

        const json labeled = io::parse_json_file(labeled_path);
        if (!labeled.is_array() || labeled.empty())
            throw ConfigError("calibrate: labeled set must be a non-empty array");
        auto provider = config::make_provider(cfg);

        // classify each item by its weakest sub-sentence
        std::vector<std::pair<double, bool>> worst_scores;
        for (const json& entry : labeled) {
            const std::string text = entry.at("text").get<std::string>();
            std::vector<FramePayload> frames;
            int i = 0;
            for (const json& fd : entry.at("frames"))
                frames.push_back({"f" + std::to_string(i++), fd.get<std::string>()});
            const auto subs = coegen::parse_sub_sentences(text);
            const auto scores = coegen::consistency_scores(subs, frames, *provider, cfg.verify);
            double worst = 1.0;
            for (const auto& s : scores) worst = std::min(worst, s.score);
            worst_scores.emplace_back(worst, entry.at("label").get<bool>());
        }

        double best_alpha = cfg.verify.alpha, best_acc = -1.0;
        json sweep = json::array();
        for (int i = 1; i < 100; ++i) {
            const double alpha = i / 100.0;
            int correct = 0;
            for (const auto& [worst, label] : worst_scores)
                if ((worst >= alpha) == label) ++correct;
            const double acc = static_cast<double>(correct) / worst_scores.size();
            sweep.push_back({{"alpha", alpha}, {"accuracy", acc}});
            if (acc > best_acc) {
                best_acc = acc;
                best_alpha = alpha;
            }
        }

        fs::create_directories(out);
        io::write_text_file(out / "alpha_calibration.json",
                            json{{"best_alpha", best_alpha},
                                 {"accuracy", best_acc},
                                 {"sweep", sweep},
                                 {"config_hash", cfg.hash},
                                 {"seed", cfg.seed}}
                                    .dump(2) +
                                "\n");
        std::cout << "calibrate: best alpha " << best_alpha << " (accuracy " << best_acc << ")\n";
    });
}

} // namespace coetal::cli
