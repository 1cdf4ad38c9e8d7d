#pragma once

#include "dash/core/errors.hpp"

#include <dash/prompt_assets.hpp>

#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dash {

inline constexpr std::string_view kObjectPlaceholder = "OBJ";
inline constexpr std::string_view kStandardTemplate = "standard";

/// Replace every OBJ placeholder in `tmpl` by `object`.
inline std::string render_template(std::string_view tmpl, std::string_view object) {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto hit = tmpl.find(kObjectPlaceholder, pos);
        if (hit == std::string_view::npos) break;
        out.append(tmpl.substr(pos, hit - pos));
        out.append(object);
        pos = hit + kObjectPlaceholder.size();
    }
    out.append(tmpl.substr(pos));
    return out;
}

/// Versioned bank of yes/no question templates.
///
/// File format: one `key<TAB>value` entry per line, `#` comments. Reserved
/// keys are `version` and `suffix`; every other key is a template id whose
/// value must contain the OBJ placeholder.
class PromptBank {
public:
    static PromptBank parse(std::string_view text) {
        PromptBank bank;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw ConfigError("prompt bank line " + std::to_string(lineno) + ": expected key<TAB>value");
            std::string key = line.substr(0, tab);
            std::string value = line.substr(tab + 1);
            if (key == "version") {
                bank.version_ = std::stoi(value);
            } else if (key == "suffix") {
                bank.suffix_ = value;
            } else {
                if (value.find(kObjectPlaceholder) == std::string::npos)
                    throw ConfigError("template '" + key + "' lacks the OBJ placeholder");
                if (bank.templates_.count(key)) throw ConfigError("duplicate template id '" + key + "'");
                bank.order_.push_back(key);
                bank.templates_.emplace(std::move(key), std::move(value));
            }
        }
        if (bank.version_ <= 0) throw ConfigError("prompt bank lacks a version entry");
        return bank;
    }

    static const PromptBank& builtin() {
        static const PromptBank bank = parse(assets::prompt_bank_v1);
        return bank;
    }

    int version() const noexcept { return version_; }
    const std::string& suffix() const noexcept { return suffix_; }
    const std::vector<std::string>& ids() const noexcept { return order_; }
    bool contains(std::string_view id) const { return templates_.count(std::string(id)) > 0; }

    const std::string& template_text(std::string_view id) const {
        auto it = templates_.find(std::string(id));
        if (it == templates_.end()) throw ConfigError("unknown prompt template '" + std::string(id) + "'");
        return it->second;
    }

    /// Question without the answer-format suffix.
    std::string question(std::string_view id, std::string_view object) const {
        return render_template(template_text(id), object);
    }

    /// Exact text sent to the model: question plus suffix.
    std::string full_prompt(std::string_view id, std::string_view object) const {
        std::string q = question(id, object);
        if (!suffix_.empty()) q += " " + suffix_;
        return q;
    }

private:
    int version_ = 0;
    std::string suffix_;
    std::vector<std::string> order_;
    std::map<std::string, std::string> templates_;
};

} // namespace dash
