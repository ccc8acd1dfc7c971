#include "e2lora/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace e2lora {

namespace {

using nlohmann::json;

// Walks one object, checking types and rejecting keys nobody asked for.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, value] : node_.items())
            if (!seen_.count(key)) throw ConfigError(join(key), "unknown key");
    }

    void real(const char* key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) throw ConfigError(join(key), "expected a number");
            out = v->get<double>();
        }
    }

    void count(const char* key, std::size_t& out) {
        if (const json* v = take(key)) out = static_cast<std::size_t>(unsigned_value(*v, key));
    }

    void seed(const char* key, std::uint64_t& out) {
        if (const json* v = take(key)) out = unsigned_value(*v, key);
    }

    void flag(const char* key, bool& out) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) throw ConfigError(join(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void text(const char* key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) throw ConfigError(join(key), "expected a string");
            out = v->get<std::string>();
        }
    }

    void optional_count(const char* key, std::optional<std::size_t>& out) {
        if (const json* v = take(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            out = static_cast<std::size_t>(unsigned_value(*v, key));
        }
    }

    /// Nested object, or nullptr when absent.
    const json* child(const char* key) { return take(key); }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json* take(const char* key) {
        seen_.insert(key);
        const auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    std::uint64_t unsigned_value(const json& v, const char* key) const {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer()) throw ConfigError(join(key), "must be non-negative");
        throw ConfigError(join(key), "expected a non-negative integer");
    }

    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
void with_child(Section& parent, const char* key, F&& body) {
    if (const json* node = parent.child(key)) {
        Section s(*node, parent.join(key));
        body(s);
    }
}

// Maps a ValidationError from a nested validate() (messages start with the field path) to a ConfigError.
[[noreturn]] void rethrow_as_config(const ValidationError& e, const char* fallback) {
    std::string msg = e.what();
    const auto space = msg.find(' ');
    if (space != std::string::npos && msg.find('.') < space) throw ConfigError(msg.substr(0, space), msg.substr(space + 1));
    throw ConfigError(fallback, msg);
}

json to_json(const RunConfig& c, bool with_output) {
    json j;
    j["seed"] = c.seed;
    j["strategy"] = to_string(c.strategy);
    j["stream"] = {{"tasks", c.stream.num_tasks},
                   {"classes_per_task", c.stream.classes_per_task},
                   {"dim", c.stream.feature_dim},
                   {"separation", c.stream.separation},
                   {"mode", to_string(c.stream.mode)},
                   {"samples_per_class", c.stream.samples_per_class}};
    j["backbone"] = {{"hidden", c.backbone.hidden}, {"features", c.backbone.feature_dim}};
    j["train"] = {{"lr_lora", c.train.lr_lora},
                  {"lr_classifier", c.train.lr_classifier},
                  {"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lambda", c.train.lambda},
                  {"temperature", c.train.temperature},
                  {"seed", c.train.seed},
                  {"proxy_count", c.train.proxy_count}};
    j["alloc"] = {{"rho", c.alloc.rho},
                  {"first_task_rank_cap",
                   c.alloc.first_task_rank_cap ? json(*c.alloc.first_task_rank_cap) : json(nullptr)}};
    j["align"] = {{"samples_per_class", c.align.samples_per_class},
                  {"epochs", c.align.epochs},
                  {"lr", c.align.lr},
                  {"seed", c.align.seed},
                  {"batch_size", c.align.batch_size}};
    if (with_output) j["output"] = {{"dir", c.out_dir.string()}, {"checkpoint", c.checkpoint}};
    return j;
}

}  // namespace

void RunConfig::validate() const {
    try {
        stream.validate();
    } catch (const ValidationError& e) {
        rethrow_as_config(e, "stream");
    }
    try {
        train.validate();
    } catch (const ValidationError& e) {
        rethrow_as_config(e, "train");
    }
    try {
        alloc.validate();
    } catch (const ValidationError& e) {
        rethrow_as_config(e, "alloc");
    }
    try {
        align.validate();
    } catch (const ValidationError& e) {
        rethrow_as_config(e, "align");
    }
    if (backbone.hidden == 0) throw ConfigError("backbone.hidden", "must be >= 1");
    if (backbone.feature_dim == 0) throw ConfigError("backbone.features", "must be >= 1");
    if (out_dir.empty()) throw ConfigError("output.dir", "must not be empty");
}

RunConfig parse_run_config(std::string_view json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }

    RunConfig cfg;
    {
        Section top(root, "");
        top.seed("seed", cfg.seed);
        std::string strategy = to_string(cfg.strategy);
        top.text("strategy", strategy);
        try {
            cfg.strategy = parse_strategy(strategy);
        } catch (const ValidationError&) {
            throw ConfigError("strategy", "expected one of e2lora, naive_lora, joint");
        }
        with_child(top, "stream", [&](Section& s) {
            s.count("tasks", cfg.stream.num_tasks);
            s.count("classes_per_task", cfg.stream.classes_per_task);
            s.count("dim", cfg.stream.feature_dim);
            s.real("separation", cfg.stream.separation);
            s.count("samples_per_class", cfg.stream.samples_per_class);
            std::string mode = to_string(cfg.stream.mode);
            s.text("mode", mode);
            try {
                cfg.stream.mode = parse_stream_mode(mode);
            } catch (const ValidationError&) {
                throw ConfigError("stream.mode", "expected class-incremental or domain-incremental");
            }
        });
        with_child(top, "backbone", [&](Section& s) {
            s.count("hidden", cfg.backbone.hidden);
            s.count("features", cfg.backbone.feature_dim);
        });
        with_child(top, "train", [&](Section& s) {
            s.real("lr_lora", cfg.train.lr_lora);
            s.real("lr_classifier", cfg.train.lr_classifier);
            s.count("epochs", cfg.train.epochs);
            s.count("batch_size", cfg.train.batch_size);
            s.real("lambda", cfg.train.lambda);
            s.real("temperature", cfg.train.temperature);
            s.seed("seed", cfg.train.seed);
            s.count("proxy_count", cfg.train.proxy_count);
        });
        with_child(top, "alloc", [&](Section& s) {
            s.real("rho", cfg.alloc.rho);
            s.optional_count("first_task_rank_cap", cfg.alloc.first_task_rank_cap);
        });
        with_child(top, "align", [&](Section& s) {
            s.count("samples_per_class", cfg.align.samples_per_class);
            s.count("epochs", cfg.align.epochs);
            s.real("lr", cfg.align.lr);
            s.seed("seed", cfg.align.seed);
            s.count("batch_size", cfg.align.batch_size);
        });
        with_child(top, "output", [&](Section& s) {
            std::string dir = cfg.out_dir.string();
            s.text("dir", dir);
            cfg.out_dir = dir;
            s.flag("checkpoint", cfg.checkpoint);
        });
    }
    cfg.stream.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string resolved_config(const RunConfig& cfg) { return to_json(cfg, true).dump(2) + "\n"; }

std::string config_hash(const RunConfig& cfg) {
    const std::string text = to_json(cfg, false).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunOptions run_options(const RunConfig& cfg) {
    RunOptions o;
    o.train = cfg.train;
    o.alloc = cfg.alloc;
    o.align = cfg.align;
    o.backbone = cfg.backbone;
    return o;
}

}  // namespace e2lora
