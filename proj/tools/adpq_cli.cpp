// adpq: calibration-free outlier-aware weight quantization from the command line.
//
//   adpq quantize   IN.aqt OUT.adpq [quant flags] [--bins N] [--format json|text]
//   adpq dequantize IN.adpq OUT.aqt
//   adpq report     ORIG.aqt PACKED.adpq [--bins N] [--format json|text]
//   adpq compare    IN.aqt [quant flags] [--rtn-bits N] [--rtn-group-size N] [--bins N] [--format json|text]
//   adpq gen        SPEC.json OUT.aqt [--seed U64]
//
// Reports go to stdout, data to files, errors to stderr as one line
// starting with "error:". Exit codes: 0 ok, 1 usage/validation,
// 2 IO/format, 3 internal invariant breach.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "adpq/adpq.hpp"

namespace {

using nlohmann::json;

int exit_code_for(adpq::ErrorCode code) {
    using adpq::ErrorCode;
    switch (code) {
        case ErrorCode::AlphaOutOfRange:
        case ErrorCode::BitsOutOfRange:
        case ErrorCode::GroupSizeInvalid:
        case ErrorCode::ClipOutOfRange:
        case ErrorCode::PiOutOfRange:
        case ErrorCode::EmptyInput:
        case ErrorCode::NonFiniteInput:
        case ErrorCode::BadSpec:
            return 1;
        case ErrorCode::IoError:
        case ErrorCode::BadMagic:
        case ErrorCode::BadVersion:
        case ErrorCode::HeaderParse:
        case ErrorCode::TruncatedData:
        case ErrorCode::NonFiniteValue:
        case ErrorCode::Truncated:
        case ErrorCode::IndexOutOfGroup:
        case ErrorCode::NonMonotonicOutlierIndices:
        case ErrorCode::NameMismatch:
        case ErrorCode::ShapeMismatch:
            return 2;
        case ErrorCode::InvariantViolation:
        case ErrorCode::CorruptQuantizedTensor:
            return 3;
    }
    return 3;
}

struct Options {
    std::string input;
    std::string second;
    double alpha = 0.05;
    std::uint32_t group_size = 128;
    int bits = 4;
    int outlier_bits = 4;
    double clip = 1.0;
    std::size_t bins = adpq::kDefaultBins;
    std::string format = "json";
    std::optional<int> rtn_bits;
    std::optional<std::uint32_t> rtn_group_size;
    std::optional<std::uint64_t> seed;

    adpq::QuantConfig config() const { return {alpha, group_size, bits, outlier_bits, clip}; }
};

void add_quant_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--alpha", o.alpha, "outlier fraction in [0, 0.5]")->capture_default_str();
    cmd->add_option("--group-size", o.group_size, "group size g, power of two in [2, 1024]")->capture_default_str();
    cmd->add_option("--bits", o.bits, "non-outlier bit width in [2, 8]")->capture_default_str();
    cmd->add_option("--outlier-bits", o.outlier_bits, "outlier bit width in [2, 8]")->capture_default_str();
    cmd->add_option("--clip", o.clip, "non-outlier clipping fraction in (0, 1]")->capture_default_str();
}

void add_report_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--bins", o.bins, "histogram bins for KL/JSD")->capture_default_str()->check(CLI::Range(2, 1 << 24));
    cmd->add_option("--format", o.format, "report format")->capture_default_str()->check(CLI::IsMember({"json", "text"}));
}

std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

std::string as_text(const json& j) {
    std::string out;
    for (const auto& [key, value] : j.items()) {
        if (!out.empty()) out += ' ';
        out += key + '=' + (value.is_number_float() ? fmt_num(value.get<double>()) : value.dump());
    }
    return out;
}

struct TensorResult {
    std::string name;
    std::size_t rows, cols;
    adpq::QuantReport report;
};

json aggregate_json(const std::vector<TensorResult>& results, const adpq::PackedModel& model) {
    const adpq::BitsReport bits = adpq::bits_report(model);
    double sq = 0.0, max_err = 0.0, penalty = 0.0;
    std::size_t outliers = 0;
    for (const auto& r : results) {
        sq += r.report.mse * static_cast<double>(r.rows * r.cols);
        max_err = std::max(max_err, r.report.max_abs_err);
        penalty += r.report.penalty_sum;
        outliers += r.report.outlier_count;
    }
    return {{"tensors", results.size()},
            {"weights", bits.weights},
            {"mse", bits.weights ? sq / static_cast<double>(bits.weights) : 0.0},
            {"max_abs_err", max_err},
            {"penalty_sum", penalty},
            {"outlier_count", outliers},
            {"b_avg_theoretical", bits.b_avg_theoretical},
            {"b_avg_actual", bits.b_avg_actual},
            {"overhead_bits", bits.overhead_bits},
            {"header_bits", bits.header_bits},
            {"count_field_bits", bits.count_field_bits},
            {"outlier_param_bits", bits.outlier_param_bits},
            {"padding_bits", bits.padding_bits}};
}

void print_report(const std::vector<TensorResult>& results, const adpq::PackedModel& model, const std::string& format) {
    const json agg = aggregate_json(results, model);
    if (format == "json") {
        json tensors = json::array();
        for (const auto& r : results) {
            tensors.push_back({{"name", r.name}, {"rows", r.rows}, {"cols", r.cols}, {"report", adpq::to_json(r.report)}});
        }
        std::cout << json{{"tensors", tensors}, {"aggregate", agg}}.dump(2) << '\n';
        return;
    }
    for (const auto& r : results) {
        std::cout << "tensor " << r.name << ' ' << r.rows << 'x' << r.cols << ": " << as_text(adpq::to_json(r.report))
                  << '\n';
    }
    std::cout << "aggregate: " << as_text(agg) << '\n';
}

std::vector<TensorResult> report_all(const adpq::TensorFile& originals, const adpq::PackedModel& model,
                                     std::size_t bins) {
    std::map<std::string, const adpq::WeightTensor*> by_name;
    for (const auto& t : originals.tensors) by_name[t.name] = &t;
    if (by_name.size() != model.tensors.size()) {
        adpq::fail(adpq::ErrorCode::NameMismatch, "original file has " + std::to_string(by_name.size()) +
                                                      " tensors, packed file has " + std::to_string(model.tensors.size()));
    }
    std::vector<TensorResult> out;
    for (const auto& qt : model.tensors) {
        auto it = by_name.find(qt.name);
        if (it == by_name.end()) {
            adpq::fail(adpq::ErrorCode::NameMismatch, "packed tensor '" + qt.name + "' has no original");
        }
        const auto& orig = *it->second;
        if (orig.rows != qt.rows || orig.cols != qt.cols) {
            adpq::fail(adpq::ErrorCode::ShapeMismatch, "tensor '" + qt.name + "' is " + std::to_string(orig.rows) + "x" +
                                                           std::to_string(orig.cols) + " originally, " +
                                                           std::to_string(qt.rows) + "x" + std::to_string(qt.cols) +
                                                           " packed");
        }
        out.push_back({qt.name, qt.rows, qt.cols, adpq::build_report(orig, qt, model, bins)});
    }
    return out;
}

int cmd_quantize(const Options& o) {
    const adpq::QuantConfig config = o.config();
    adpq::validate(config);
    const adpq::TensorFile in = adpq::read_tensor_file(o.input);
    adpq::PackedModel model{adpq::kPackVersion, config, {}};
    for (const auto& t : in.tensors) model.tensors.push_back(adpq::quantize_tensor(t, config));
    const auto bytes = adpq::encode(model);
    const auto results = report_all(in, model, o.bins);
    adpq::write_file_bytes(o.second, bytes);
    print_report(results, model, o.format);
    return 0;
}

int cmd_dequantize(const Options& o) {
    const adpq::PackedModel model = adpq::decode(adpq::read_file_bytes(o.input));
    adpq::TensorFile out;
    for (const auto& qt : model.tensors) out.tensors.push_back(adpq::dequantize_tensor(qt));
    adpq::write_tensor_file(o.second, out);
    return 0;
}

int cmd_report(const Options& o) {
    const adpq::TensorFile originals = adpq::read_tensor_file(o.input);
    const adpq::PackedModel model = adpq::decode(adpq::read_file_bytes(o.second));
    print_report(report_all(originals, model, o.bins), model, o.format);
    return 0;
}

json compare_row(const std::string& method, const adpq::TensorFile& in, const adpq::PackedModel& model,
                 std::size_t bins) {
    std::vector<float> orig, recon;
    for (std::size_t i = 0; i < model.tensors.size(); ++i) {
        const auto& t = in.tensors[i];
        const auto r = adpq::dequantize_tensor(model.tensors[i]);
        orig.insert(orig.end(), t.data.begin(), t.data.end());
        recon.insert(recon.end(), r.data.begin(), r.data.end());
    }
    const adpq::BitsReport bits = adpq::bits_report(model);
    double sq = 0.0, max_err = 0.0;
    for (std::size_t i = 0; i < orig.size(); ++i) {
        const double d = static_cast<double>(orig[i]) - recon[i];
        sq += d * d;
        max_err = std::max(max_err, std::abs(d));
    }
    const auto& c = model.config;
    return {{"method", method},
            {"alpha", c.alpha},
            {"group_size", c.group_size},
            {"bits", c.bits_c},
            {"outlier_bits", c.bits_o},
            {"clip", c.clip_fraction},
            {"outlier_count", [&] {
                 std::size_t k = 0;
                 for (const auto& qt : model.tensors) k += qt.outlier_count();
                 return k;
             }()},
            {"mse", orig.empty() ? 0.0 : sq / static_cast<double>(orig.size())},
            {"max_abs_err", max_err},
            {"kl", orig.empty() ? 0.0 : adpq::kl_hist(orig, recon, bins)},
            {"b_avg_theoretical", bits.b_avg_theoretical},
            {"b_avg_actual", bits.b_avg_actual}};
}

int cmd_compare(const Options& o) {
    const adpq::QuantConfig config = o.config();
    adpq::validate(config);
    const adpq::QuantConfig rtn_config{0.0, o.rtn_group_size.value_or(o.group_size), o.rtn_bits.value_or(o.bits),
                                       o.rtn_bits.value_or(o.bits), 1.0};
    adpq::validate(rtn_config);
    const adpq::TensorFile in = adpq::read_tensor_file(o.input);
    adpq::PackedModel rtn{adpq::kPackVersion, rtn_config, {}};
    adpq::PackedModel ours{adpq::kPackVersion, config, {}};
    for (const auto& t : in.tensors) {
        rtn.tensors.push_back(adpq::rtn_quantize(t, rtn_config.group_size, rtn_config.bits_c));
        ours.tensors.push_back(adpq::quantize_tensor(t, config));
    }
    const json rows = json::array({compare_row("rtn", in, rtn, o.bins), compare_row("adpq", in, ours, o.bins)});
    if (o.format == "json") {
        std::cout << json{{"rows", rows}}.dump(2) << '\n';
    } else {
        std::printf("%-6s %7s %5s %4s %4s %6s %14s %14s %8s %8s\n", "method", "alpha", "g", "b_C", "b_O", "clip", "mse",
                    "kl", "b_theo", "b_act");
        for (const auto& r : rows) {
            std::printf("%-6s %7.4f %5u %4d %4d %6.3f %14.6g %14.6g %8.4f %8.4f\n", r["method"].get<std::string>().c_str(),
                        r["alpha"].get<double>(), r["group_size"].get<unsigned>(), r["bits"].get<int>(),
                        r["outlier_bits"].get<int>(), r["clip"].get<double>(), r["mse"].get<double>(),
                        r["kl"].get<double>(), r["b_avg_theoretical"].get<double>(), r["b_avg_actual"].get<double>());
        }
    }
    return 0;
}

int cmd_gen(const Options& o) {
    std::ifstream spec_in(o.input);
    if (!spec_in) adpq::fail(adpq::ErrorCode::IoError, "cannot open '" + o.input + "' for reading");
    json doc;
    try {
        doc = json::parse(spec_in);
    } catch (const json::exception& e) {
        adpq::fail(adpq::ErrorCode::BadSpec, e.what());
    }
    std::vector<json> specs = doc.is_array() ? doc.get<std::vector<json>>() : std::vector<json>{doc};
    adpq::TensorFile out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        adpq::SynthSpec spec = adpq::synth_spec_from_json(specs[i]);
        if (o.seed) spec.seed = *o.seed;
        if (specs.size() > 1 && !specs[i].contains("name")) spec.name = "weight_" + std::to_string(i);
        out.tensors.push_back(adpq::generate(spec));
    }
    try {
        auto bytes = adpq::serialize_tensor_file(out);
        adpq::write_file_bytes(o.second, bytes);
    } catch (const adpq::Error& e) {
        if (e.code() == adpq::ErrorCode::InvariantViolation) adpq::fail(adpq::ErrorCode::BadSpec, e.what());
        throw;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"calibration-free outlier-aware weight quantization"};
    app.require_subcommand(1);
    Options o;

    auto* quantize = app.add_subcommand("quantize", "quantize every tensor of a .aqt file into a .adpq container");
    quantize->add_option("input", o.input, "input .aqt")->required();
    quantize->add_option("output", o.second, "output .adpq")->required();
    add_quant_flags(quantize, o);
    add_report_flags(quantize, o);

    auto* dequantize = app.add_subcommand("dequantize", "reconstruct a .aqt file from a .adpq container");
    dequantize->add_option("input", o.input, "input .adpq")->required();
    dequantize->add_option("output", o.second, "output .aqt")->required();

    auto* report = app.add_subcommand("report", "quality report of a .adpq container against its originals");
    report->add_option("original", o.input, "original .aqt")->required();
    report->add_option("packed", o.second, "packed .adpq")->required();
    add_report_flags(report, o);

    auto* compare = app.add_subcommand("compare", "RTN vs outlier-aware quantization side by side");
    compare->add_option("input", o.input, "input .aqt")->required();
    add_quant_flags(compare, o);
    compare->add_option("--rtn-bits", o.rtn_bits, "RTN bit width (default: --bits)");
    compare->add_option("--rtn-group-size", o.rtn_group_size, "RTN group size (default: --group-size)");
    add_report_flags(compare, o);

    auto* gen = app.add_subcommand("gen", "generate synthetic weights from a JSON spec");
    gen->add_option("spec", o.input, "spec .json (object or array of objects)")->required();
    gen->add_option("output", o.second, "output .aqt")->required();
    gen->add_option("--seed", o.seed, "override the spec seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: usage: " << e.what() << '\n';
        return 1;
    }

    try {
        if (quantize->parsed()) return cmd_quantize(o);
        if (dequantize->parsed()) return cmd_dequantize(o);
        if (report->parsed()) return cmd_report(o);
        if (compare->parsed()) return cmd_compare(o);
        if (gen->parsed()) return cmd_gen(o);
    } catch (const adpq::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
