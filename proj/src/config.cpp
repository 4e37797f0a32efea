#include "bdg/config.hpp"
#include "bdg/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace bdg {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw std::invalid_argument("invalid value '" + value + "' for " + key);
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        bad_value(key, v);
    }
    if (used != v.size()) bad_value(key, v);
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        bad_value(key, v);
    }
    if (used != v.size()) bad_value(key, v);
    return out;
}

bool to_bool(const std::string& key, std::string v) {
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    bad_value(key, v);
}

std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::array<double, 3> triple(const std::string& key, const std::string& v) {
    const auto parts = words(v);
    if (parts.size() != 3) bad_value(key, v);
    return {to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2])};
}

std::string fmt(const std::array<double, 3>& t) { return fmt(t[0]) + "," + fmt(t[1]) + "," + fmt(t[2]); }

using Set = std::function<void(RunConfig&, const std::string&)>;
using Get = std::function<std::string(const RunConfig&)>;

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> k;
    auto add = [&](const char* section, const char* name, const char* help, Set set, Get get) {
        k.push_back({section, name, help, std::move(set), std::move(get)});
    };
    add("network", "decoder_channels", "channel width of the boundary branch and decoder",
        [](RunConfig& c, const std::string& v) { c.network.decoder_channels = static_cast<int>(to_int("decoder_channels", v)); },
        [](const RunConfig& c) { return std::to_string(c.network.decoder_channels); });
    add("network", "skip_levels", "decoder stages fed by an encoder skip (subset of 1..4)",
        [](RunConfig& c, const std::string& v) {
            c.network.skip_levels.clear();
            for (const auto& w : words(v)) c.network.skip_levels.push_back(static_cast<int>(to_int("skip_levels", w)));
        },
        [](const RunConfig& c) {
            std::string s;
            for (int l : c.network.skip_levels) s += (s.empty() ? "" : ",") + std::to_string(l);
            return s;
        });
    add("network", "sigma", "boundary map width in pixels",
        [](RunConfig& c, const std::string& v) { c.network.sigma = to_double("sigma", v); },
        [](const RunConfig& c) { return fmt(c.network.sigma); });
    add("network", "input_size", "working resolution (multiple of 32)",
        [](RunConfig& c, const std::string& v) { c.network.input_size = static_cast<int>(to_int("input_size", v)); },
        [](const RunConfig& c) { return std::to_string(c.network.input_size); });
    add("network", "encoder", "toy or external",
        [](RunConfig& c, const std::string& v) { c.network.encoder_kind = encoder_kind_from_string(v); },
        [](const RunConfig& c) { return to_string(c.network.encoder_kind); });
    add("network", "bdgm", "enable the boundary branch",
        [](RunConfig& c, const std::string& v) { c.network.use_bdgm = to_bool("bdgm", v); },
        [](const RunConfig& c) { return fmt(c.network.use_bdgm); });
    add("network", "bdgd", "enable the boundary-gated decoder",
        [](RunConfig& c, const std::string& v) { c.network.use_bdgd = to_bool("bdgd", v); },
        [](const RunConfig& c) { return fmt(c.network.use_bdgd); });
    add("network", "gate_gradients", "back-propagate through the decoder gates",
        [](RunConfig& c, const std::string& v) { c.network.gate_gradients = to_bool("gate_gradients", v); },
        [](const RunConfig& c) { return fmt(c.network.gate_gradients); });
    add("network", "interpolation", "bilinear sampling convention (fixed)",
        [](RunConfig&, const std::string& v) {
            if (v != "half-pixel") bad_value("interpolation", v);
        },
        [](const RunConfig&) { return std::string("half-pixel"); });

    add("loss", "lambda", "ignore squared boundary residuals at or below this",
        [](RunConfig& c, const std::string& v) { c.loss.lambda = to_double("lambda", v); },
        [](const RunConfig& c) { return fmt(c.loss.lambda); });
    add("loss", "weight_kernel", "box size of the pixel weight map (odd)",
        [](RunConfig& c, const std::string& v) { c.loss.weight_kernel = static_cast<int>(to_int("weight_kernel", v)); },
        [](const RunConfig& c) { return std::to_string(c.loss.weight_kernel); });
    add("loss", "weight_gain", "gain of the pixel weight map",
        [](RunConfig& c, const std::string& v) { c.loss.weight_gain = to_double("weight_gain", v); },
        [](const RunConfig& c) { return fmt(c.loss.weight_gain); });
    add("loss", "bdm_sum", "sum the boundary term per image instead of averaging",
        [](RunConfig& c, const std::string& v) { c.loss.bdm_sum = to_bool("bdm_sum", v); },
        [](const RunConfig& c) { return fmt(c.loss.bdm_sum); });
    add("loss", "wbce_unnormalized", "plain weighted BCE sum per image",
        [](RunConfig& c, const std::string& v) { c.loss.wbce_unnormalized = to_bool("wbce_unnormalized", v); },
        [](const RunConfig& c) { return fmt(c.loss.wbce_unnormalized); });

    add("train", "optimizer", "optimizer (adam)",
        [](RunConfig& c, const std::string& v) {
            if (v != "adam") bad_value("optimizer", v);
            c.optimizer.kind = v;
        },
        [](const RunConfig& c) { return c.optimizer.kind; });
    add("train", "lr", "learning rate",
        [](RunConfig& c, const std::string& v) { c.optimizer.lr = to_double("lr", v); },
        [](const RunConfig& c) { return fmt(c.optimizer.lr); });
    add("train", "beta1", "first-moment decay",
        [](RunConfig& c, const std::string& v) { c.optimizer.beta1 = to_double("beta1", v); },
        [](const RunConfig& c) { return fmt(c.optimizer.beta1); });
    add("train", "beta2", "second-moment decay",
        [](RunConfig& c, const std::string& v) { c.optimizer.beta2 = to_double("beta2", v); },
        [](const RunConfig& c) { return fmt(c.optimizer.beta2); });
    add("train", "adam_eps", "denominator guard",
        [](RunConfig& c, const std::string& v) { c.optimizer.eps = to_double("adam_eps", v); },
        [](const RunConfig& c) { return fmt(c.optimizer.eps); });
    add("train", "batch_size", "images per step",
        [](RunConfig& c, const std::string& v) { c.optimizer.batch_size = static_cast<int>(to_int("batch_size", v)); },
        [](const RunConfig& c) { return std::to_string(c.optimizer.batch_size); });
    add("train", "iterations", "number of optimizer steps",
        [](RunConfig& c, const std::string& v) { c.optimizer.iterations = static_cast<int>(to_int("iterations", v)); },
        [](const RunConfig& c) { return std::to_string(c.optimizer.iterations); });
    add("train", "seed", "seed for initialisation, shuffling and augmentation",
        [](RunConfig& c, const std::string& v) {
            const long long s = to_int("seed", v);
            if (s < 0) bad_value("seed", v);
            c.seed = static_cast<std::uint64_t>(s);
        },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    add("train", "augment", "random flips and quarter turns",
        [](RunConfig& c, const std::string& v) { c.augment = to_bool("augment", v); },
        [](const RunConfig& c) { return fmt(c.augment); });
    add("train", "checkpoint_every", "save every N steps (0: only at the end)",
        [](RunConfig& c, const std::string& v) { c.checkpoint_every = static_cast<int>(to_int("checkpoint_every", v)); },
        [](const RunConfig& c) { return std::to_string(c.checkpoint_every); });

    add("data", "manifest", "dataset layout manifest",
        [](RunConfig& c, const std::string& v) { c.manifest = v; },
        [](const RunConfig& c) { return c.manifest.string(); });
    add("data", "split", "split manifest (train on its train ids)",
        [](RunConfig& c, const std::string& v) { c.split = v; },
        [](const RunConfig& c) { return c.split.string(); });
    add("data", "output_dir", "directory for logs and checkpoints",
        [](RunConfig& c, const std::string& v) { c.output_dir = v; },
        [](const RunConfig& c) { return c.output_dir.string(); });
    add("data", "normalized_bdm", "peak-1 boundary maps",
        [](RunConfig& c, const std::string& v) { c.normalized_bdm = to_bool("normalized_bdm", v); },
        [](const RunConfig& c) { return fmt(c.normalized_bdm); });
    add("data", "boundary", "inner or symmetric",
        [](RunConfig& c, const std::string& v) {
            if (v == "inner") {
                c.boundary = BoundaryMode::inner;
            } else if (v == "symmetric") {
                c.boundary = BoundaryMode::symmetric;
            } else {
                bad_value("boundary", v);
            }
        },
        [](const RunConfig& c) { return std::string(c.boundary == BoundaryMode::inner ? "inner" : "symmetric"); });
    add("data", "mean", "per-channel standardisation mean (r,g,b)",
        [](RunConfig& c, const std::string& v) { c.norm.mean = triple("mean", v); },
        [](const RunConfig& c) { return fmt(c.norm.mean); });
    add("data", "std", "per-channel standardisation deviation (r,g,b)",
        [](RunConfig& c, const std::string& v) { c.norm.std = triple("std", v); },
        [](const RunConfig& c) { return fmt(c.norm.std); });
    return k;
}

}  // namespace

void RunConfig::validate() const {
    network.validate();
    loss.validate();
    if (!(optimizer.lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0, 1)");
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0, 1)");
    if (!(optimizer.eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
    if (optimizer.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (optimizer.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
    for (double s : norm.std) {
        if (!(s > 0.0)) throw std::invalid_argument("std entries must be > 0");
    }
}

PreprocessOptions RunConfig::preprocess_options() const {
    PreprocessOptions opt;
    opt.size = network.input_size;
    opt.sigma = network.sigma;
    opt.normalized_bdm = normalized_bdm;
    opt.boundary = boundary;
    opt.norm = norm;
    return opt;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

void apply_setting(RunConfig& cfg, const std::string& name, const std::string& value) {
    for (const auto& k : config_keys()) {
        if (k.name == name) {
            k.set(cfg, value);
            return;
        }
    }
    throw std::invalid_argument("unknown configuration key '" + name + "'");
}

RunConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::invalid_argument("config: " + std::string(e.what()));
    }
    RunConfig cfg;
    for (const auto& [section, entries] : tree) {
        if (entries.empty()) throw std::invalid_argument("config: key '" + section + "' outside a section");
        for (const auto& [name, value] : entries) {
            const auto& keys = config_keys();
            const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) {
                return k.section == section && k.name == name;
            });
            if (it == keys.end()) throw std::invalid_argument("config: unknown key [" + section + "] " + name);
            it->set(cfg, value.get_value<std::string>());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_keys()) {
        if (k.section != section) {
            if (!section.empty()) os << '\n';
            section = k.section;
            os << '[' << section << "]\n";
        }
        os << k.name << " = " << k.get(cfg) << '\n';
    }
    return os.str();
}

}  // namespace bdg
