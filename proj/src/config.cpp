#include "rrrn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "rrrn/error.hpp"
#include "rrrn/random.hpp"

namespace rrrn {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("invalid value '{}' for key '{}'", value, key));
}

double to_double(std::string_view key, std::string_view v) {
    try {
        std::size_t used = 0;
        const std::string s(v);
        const double d = std::stod(s, &used);
        if (used != s.size()) bad_value(key, v);
        return d;
    } catch (const std::logic_error&) {
        bad_value(key, v);
    }
}

template <typename T>
T to_integer(std::string_view key, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v);
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, v);
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"optimizer.kind",
         [](RunConfig&, std::string_view k, std::string_view v) {
             if (v != "ADAM") bad_value(k, v);
         }},
        {"optimizer.beta1", [](RunConfig& c, auto k, auto v) { c.optimizer.beta1 = to_double(k, v); }},
        {"optimizer.beta2", [](RunConfig& c, auto k, auto v) { c.optimizer.beta2 = to_double(k, v); }},
        {"optimizer.epsilon", [](RunConfig& c, auto k, auto v) { c.optimizer.epsilon = to_double(k, v); }},
        {"epochs", [](RunConfig& c, auto k, auto v) { c.epochs = to_integer<int>(k, v); }},
        {"batch_size", [](RunConfig& c, auto k, auto v) { c.batch_size = to_integer<int>(k, v); }},
        {"learning_rate", [](RunConfig& c, auto k, auto v) { c.learning_rate = to_double(k, v); }},
        {"loss_weights.beta", [](RunConfig& c, auto k, auto v) { c.loss_weights.beta = to_double(k, v); }},
        {"loss_weights.lambda1", [](RunConfig& c, auto k, auto v) { c.loss_weights.lambda1 = to_double(k, v); }},
        {"loss_weights.lambda2", [](RunConfig& c, auto k, auto v) { c.loss_weights.lambda2 = to_double(k, v); }},
        {"backbone.variant",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             const auto parsed = parse_backbone_variant(v);
             if (!parsed) bad_value(k, v);
             c.backbone.variant = *parsed;
         }},
        {"backbone.stream_channels",
         [](RunConfig& c, auto k, auto v) { c.backbone.stream_channels = to_integer<int>(k, v); }},
        {"backbone.input_size", [](RunConfig& c, auto k, auto v) { c.backbone.input_size = to_integer<int>(k, v); }},
        {"backbone.pretrained_init",
         [](RunConfig& c, auto k, auto v) { c.backbone.pretrained_init = to_bool(k, v); }},
        {"seed", [](RunConfig& c, auto k, auto v) { c.seed = to_integer<std::uint64_t>(k, v); }},
        {"augmentation_enabled", [](RunConfig& c, auto k, auto v) { c.augmentation_enabled = to_bool(k, v); }},
        {"region_attention", [](RunConfig& c, auto k, auto v) { c.region_attention = to_bool(k, v); }},
        {"attention_reduction",
         [](RunConfig& c, auto k, auto v) { c.attention_reduction = to_integer<int>(k, v); }},
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    optimizer.validate();
    loss_weights.validate();
    if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be non-negative");
    model().validate();
}

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.backbone = backbone;
    m.reduction = attention_reduction;
    m.region_attention = region_attention;
    return m;
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view l = line;
        if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
        l = trim(l);
        if (l.empty()) continue;
        const auto eq = l.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: expected key = value", line_no));
        }
        const auto key = trim(l.substr(0, eq));
        const auto value = trim(l.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: unknown key '{}'", line_no, key));
        }
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const RunConfig& c) {
    std::string out;
    auto line = [&out](std::string_view key, const auto& value) { out += fmt::format("{} = {}\n", key, value); };
    line("optimizer.kind", "ADAM");
    line("optimizer.beta1", c.optimizer.beta1);
    line("optimizer.beta2", c.optimizer.beta2);
    line("optimizer.epsilon", c.optimizer.epsilon);
    line("epochs", c.epochs);
    line("batch_size", c.batch_size);
    line("learning_rate", c.learning_rate);
    line("loss_weights.beta", c.loss_weights.beta);
    line("loss_weights.lambda1", c.loss_weights.lambda1);
    line("loss_weights.lambda2", c.loss_weights.lambda2);
    line("backbone.variant", to_string(c.backbone.variant));
    line("backbone.stream_channels", c.backbone.stream_channels);
    line("backbone.input_size", c.backbone.input_size);
    line("backbone.pretrained_init", c.backbone.pretrained_init);
    line("seed", c.seed);
    line("augmentation_enabled", c.augmentation_enabled);
    line("region_attention", c.region_attention);
    line("attention_reduction", c.attention_reduction);
    return out;
}

std::string config_fingerprint(const RunConfig& config) {
    return fmt::format("{:016x}", stable_hash(format_config(config)));
}

}  // namespace rrrn
