#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "hali/checks.hpp"
#include "hali/config.hpp"
#include "hali/data.hpp"
#include "hali/imageio.hpp"
#include "hali/latent.hpp"
#include "hali/trainer.hpp"

namespace fs = std::filesystem;
using namespace hali;

namespace {

const std::vector<std::string> kConfigKeys = {
    "model",         "data_dir",       "out_dir",     "steps",          "batch",
    "lr",            "beta1",          "beta2",       "adam_eps",       "lambda_sup",
    "labeled_per_class", "labeled_batch", "seed",     "checkpoint_every", "log_every",
    "eval_batch",    "train_limit",    "val_count"};

struct RunSetup {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    data::Dataset dataset;
    std::string out_dir;
};

std::string now_string() {
    std::time_t t = std::time(nullptr);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    return buf;
}

RunSetup load_setup(const std::string& config_path, uint64_t seed_override, bool has_seed, int steps_override,
                    const std::string& out_override) {
    FlatConfig fc = FlatConfig::parse_file(config_path);
    fc.require_known(kConfigKeys);

    RunSetup s;
    s.model_cfg = ModelConfig::by_name(fc.get_str("model", "mnist-small"));

    TrainConfig& t = s.train_cfg;
    t.batch = static_cast<int>(fc.get_int("batch", 64));
    t.steps = static_cast<int>(fc.get_int("steps", 1500));
    t.adam.lr = static_cast<float>(fc.get_float("lr", 1e-4));
    t.adam.beta1 = static_cast<float>(fc.get_float("beta1", 0.5));
    t.adam.beta2 = static_cast<float>(fc.get_float("beta2", 0.999));
    t.adam.eps = static_cast<float>(fc.get_float("adam_eps", 1e-8));
    t.lambda_sup = static_cast<float>(fc.get_float("lambda_sup", 1.0));
    t.labeled_per_class = static_cast<int>(fc.get_int("labeled_per_class", 0));
    t.labeled_batch = static_cast<int>(fc.get_int("labeled_batch", 32));
    t.seed = fc.get_u64("seed", 1);
    t.checkpoint_every = static_cast<int>(fc.get_int("checkpoint_every", 0));
    t.log_every = static_cast<int>(fc.get_int("log_every", 10));
    t.eval_batch = static_cast<int>(fc.get_int("eval_batch", 64));
    t.config_digest = fc.digest();

    if (has_seed) t.seed = seed_override;
    if (steps_override > 0) t.steps = steps_override;

    s.out_dir = !out_override.empty() ? out_override : fc.get_str("out_dir", "out");
    t.out_dir = s.out_dir;

    std::string data_dir = fc.get_str("data_dir", "");
    if (data_dir.empty()) {
        const char* env = std::getenv("HALI_DATA_DIR");
        if (env) data_dir = env;
    }
    int train_limit = static_cast<int>(fc.get_int("train_limit", 10000));
    int val_count = static_cast<int>(fc.get_int("val_count", 1000));
    std::string fallback = (fs::path(s.out_dir) / "synthetic-data").string();
    s.dataset = data::load_or_synthesize(data_dir, fallback, train_limit, val_count);
    return s;
}

void write_manifest(const RunSetup& s) {
    fs::create_directories(s.out_dir);
    RunManifest m;
    m.config_digest = s.train_cfg.config_digest;
    m.seed = s.train_cfg.seed;
    m.code_version = kCodeVersion;
    m.dataset_checksum = s.dataset.checksum;
    m.start_time = now_string();
    m.write((fs::path(s.out_dir) / "manifest.txt").string());
}

HaliModel load_model_from_run(const RunSetup& s) {
    SeededRng rng(s.train_cfg.seed, 0xb0111d);
    HaliModel model = build_networks(s.model_cfg, rng);
    AdamState d, g;
    d.init(model.discriminator_params());
    g.init(model.generator_params());
    SeededRng tmp(0, 0);
    std::string ckpt = (fs::path(s.out_dir) / "final.ckpt").string();
    checkpoint_load(ckpt, model, d, g, tmp, s.train_cfg.config_digest);
    return model;
}

Tensor stack_images(const std::vector<Tensor>& images) {
    const Shape& s0 = images.front().shape();
    Tensor out = Tensor::zeros({static_cast<int>(images.size()), s0[1], s0[2], s0[3]});
    size_t stride = static_cast<size_t>(out.numel()) / images.size();
    for (size_t i = 0; i < images.size(); ++i)
        std::copy(images[i].data().begin(), images[i].data().end(), out.data().begin() + static_cast<long>(i * stride));
    return out;
}

Tensor first_rows(const Tensor& images, int n) {
    const Shape& s = images.shape();
    n = std::min(n, s[0]);
    size_t stride = static_cast<size_t>(images.numel() / s[0]);
    Tensor out = Tensor::zeros({n, s[1], s[2], s[3]});
    std::copy(images.data().begin(), images.data().begin() + static_cast<long>(n * stride), out.data().begin());
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"HALI workbench: hierarchical adversarially learned inference at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    uint64_t seed = 0;
    bool has_seed = false;
    int steps = 0, trials = 1000, level = 1, coord = 0;
    float alpha = 2.0f;
    std::string mask_rect = "10,10,8,8";

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* copt = cmd->add_option("--config", config_path, "flat key=value run configuration");
        if (needs_config) copt->required();
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) { has_seed = true; });
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--steps", steps, "training step override");
    };

    CLI::App* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    c_gradcheck->add_option("--seed", seed, "suite seed")->each([&](const std::string&) { has_seed = true; });
    c_gradcheck->add_option("--out", out_dir, "report directory");

    CLI::App* c_theory = app.add_subcommand("verify-theory", "divergence-oracle lemma/proposition suite");
    c_theory->add_option("--trials", trials, "random pairs per lemma case");
    c_theory->add_option("--seed", seed, "suite seed")->each([&](const std::string&) { has_seed = true; });
    c_theory->add_option("--out", out_dir, "report directory");

    CLI::App* c_train = app.add_subcommand("train", "run the adversarial training loop");
    add_common(c_train, true);

    CLI::App* c_semisup = app.add_subcommand("eval-semisup", "test error of the classifier head");
    add_common(c_semisup, true);

    CLI::App* c_recon = app.add_subcommand("reconstruct", "per-level reconstruction grids");
    add_common(c_recon, true);

    CLI::App* c_sweep = app.add_subcommand("sweep", "latent sweep grid");
    add_common(c_sweep, true);
    c_sweep->add_option("--level", level, "latent level (1 or 2)");
    c_sweep->add_option("--coord", coord, "coordinate (z2 entry or z1 feature map)");

    CLI::App* c_innovate = app.add_subcommand("innovate", "innovation-tensor edit grid");
    add_common(c_innovate, true);
    c_innovate->add_option("--coord", coord, "z2 coordinate");
    c_innovate->add_option("--alpha", alpha, "edit scale");

    CLI::App* c_inpaint = app.add_subcommand("inpaint", "mask-based inpainting sequence");
    add_common(c_inpaint, true);
    c_inpaint->add_option("--mask-rect", mask_rect, "hidden rectangle x,y,w,h");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (*c_gradcheck) {
            auto results = checks::gradient_suite(has_seed ? seed : 7);
            for (const auto& r : results) std::cout << checks::format_result(r) << "\n";
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                checks::write_report((fs::path(out_dir) / "gradcheck-report.txt").string(), results);
            }
            int failures = checks::count_failures(results);
            std::cout << failures << " of " << results.size() << " checks failed\n";
            return failures == 0 ? 0 : 1;
        }

        if (*c_theory) {
            auto results = checks::theory_suite(trials, has_seed ? seed : 7);
            for (const auto& r : results) std::cout << checks::format_result(r) << "\n";
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                checks::write_report((fs::path(out_dir) / "theory-report.txt").string(), results);
            }
            int failures = checks::count_failures(results);
            std::cout << failures << " of " << results.size() << " checks failed\n";
            return failures == 0 ? 0 : 1;
        }

        if (*c_train) {
            RunSetup s = load_setup(config_path, seed, has_seed, steps, out_dir);
            write_manifest(s);
            std::cout << "dataset: " << s.dataset.source << " (" << s.dataset.train_images.dim(0)
                      << " train images)\n";
            SeededRng rng(s.train_cfg.seed, 0xb0111d);
            HaliModel model = build_networks(s.model_cfg, rng);
            Trainer trainer(model, s.train_cfg, s.dataset);
            trainer.run([](const MetricsRecord& r) {
                std::printf("step %6lld  L_d %.4f  L_g %.4f  rho_q %.3f  rho_p %.3f  recon1 %.2f  recon2 %.2f\n",
                            static_cast<long long>(r.step), r.l_d, r.l_g, r.rho_q, r.rho_p, r.recon_l1,
                            r.recon_l2);
            });
            std::cout << "done; checkpoint at " << (fs::path(s.out_dir) / "final.ckpt").string() << "\n";
            return 0;
        }

        if (*c_semisup) {
            RunSetup s = load_setup(config_path, seed, has_seed, steps, out_dir);
            HaliModel model = load_model_from_run(s);
            Trainer trainer(model, s.train_cfg, s.dataset);
            int errors = 0;
            double rate = trainer.evaluate_test_error(&errors);
            int n = s.dataset.test_images.dim(0);
            std::printf("MNIST-protocol semi-supervised evaluation (%d labels)\n",
                        s.train_cfg.labeled_per_class * s.dataset.classes);
            std::printf("%-24s %s\n", "", "(# errors)");
            std::printf("%-24s %d of %d (%.2f%%)\n", "HALI (desk scale)", errors, n, rate * 100.0);
            return 0;
        }

        RunSetup s = load_setup(config_path, seed, has_seed, steps, out_dir);
        HaliModel model = load_model_from_run(s);
        fs::create_directories(s.out_dir);

        if (*c_recon) {
            Tensor x = first_rows(s.dataset.val_images, 8);
            Tensor x1 = latent::reconstruct_at_level(model, x, 1, latent::SampleMode::Mean, nullptr);
            Tensor x2 = latent::reconstruct_at_level(model, x, 2, latent::SampleMode::Mean, nullptr);
            // one row per image: original | level-1 | level-2
            std::vector<Tensor> tiles;
            for (int i = 0; i < x.dim(0); ++i) {
                for (const Tensor* src : {&x, &x1, &x2}) {
                    Tensor t = Tensor::zeros({1, x.dim(1), x.dim(2), x.dim(3)});
                    size_t stride = static_cast<size_t>(t.numel());
                    std::copy(src->data().begin() + static_cast<long>(i * stride),
                              src->data().begin() + static_cast<long>((i + 1) * stride), t.data().begin());
                    tiles.push_back(t);
                }
            }
            std::string path = (fs::path(s.out_dir) / "reconstructions.pgm").string();
            img::write_image_grid(stack_images(tiles), x.dim(0), 3, path);
            std::cout << "wrote " << path << "\n";
            return 0;
        }

        if (*c_sweep) {
            std::vector<float> alphas{-3, -2, -1, 0, 1, 2, 3};
            Tensor base = first_rows(s.dataset.val_images, 1);
            auto images = latent::latent_sweep(model, base, level, coord, alphas, nullptr);
            std::string path = (fs::path(s.out_dir) / ("sweep-l" + std::to_string(level) + "-c" +
                                                       std::to_string(coord) + ".pgm"))
                                   .string();
            img::write_image_grid(stack_images(images), 1, static_cast<int>(alphas.size()), path);
            std::cout << "wrote " << path << "\n";
            return 0;
        }

        if (*c_innovate) {
            Tensor x = first_rows(s.dataset.val_images, 1);
            auto edit = latent::innovation_edit(model, x, coord, alpha, latent::SampleMode::Mean, nullptr);
            Tensor plain = latent::reconstruct_at_level(model, x, 1, latent::SampleMode::Mean, nullptr);
            std::string path = (fs::path(s.out_dir) / ("innovation-c" + std::to_string(coord) + ".pgm")).string();
            img::write_image_grid(stack_images({x, plain, edit.image}), 1, 3, path);
            std::cout << "wrote " << path << "\n";
            return 0;
        }

        if (*c_inpaint) {
            int rx = 10, ry = 10, rw = 8, rh = 8;
            if (std::sscanf(mask_rect.c_str(), "%d,%d,%d,%d", &rx, &ry, &rw, &rh) != 4)
                throw ArgumentError("--mask-rect expects x,y,w,h");
            Tensor x = first_rows(s.dataset.val_images, 1);
            latent::InpaintTask task;
            task.x = x;
            task.mask = Tensor::full({1, 1, x.dim(2), x.dim(3)}, 1.0f);
            for (int y = ry; y < ry + rh; ++y)
                for (int xx = rx; xx < rx + rw; ++xx)
                    if (y >= 0 && y < x.dim(2) && xx >= 0 && xx < x.dim(3))
                        task.mask.data()[static_cast<size_t>(y) * x.dim(3) + xx] = 0.0f;
            auto iterates = latent::inpaint(model, task, nullptr);
            std::vector<Tensor> tiles{x};
            for (auto& t : iterates) tiles.push_back(t);
            std::string path = (fs::path(s.out_dir) / "inpaint.pgm").string();
            img::write_image_grid(stack_images(tiles), 1, static_cast<int>(tiles.size()), path);
            std::cout << "wrote " << path << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
