#include "clear/decompose.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "clear/service_client.hpp"

namespace clear {

namespace {

struct Token {
    std::string text;
    size_t start = 0;  // char offset within the sentence
};

std::vector<Token> word_tokens(const std::string& s) {
    std::vector<Token> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i >= s.size()) break;
        size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        out.push_back({s.substr(start, i - start), start});
    }
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string strip_punct(const std::string& s) {
    std::string out;
    for (char c : s)
        if (std::isalnum(static_cast<unsigned char>(c))) out += c;
    return out;
}

// Closed word lists for the coordination heuristic. Verbs flag predicate
// conjuncts; anchors mark where a shared object-list prefix may end.
const std::set<std::string>& verb_words() {
    static const std::set<std::string> v = {
        "is",     "are",   "was",    "were",  "am",     "be",    "been",
        "being",  "has",   "have",   "had",   "does",   "do",    "did",
        "can",    "could", "will",   "would", "may",    "might", "must",
        "plays",  "play",  "played", "works", "worked", "lives", "lived",
        "runs",   "ran",   "serves", "served", "holds", "held",  "wrote",
        "writes", "won",   "wins",   "leads", "led",    "stars", "starred",
        "became", "become", "remains", "remained", "lies", "lay", "flows",
        "flowed", "stands", "stood", "contains", "contained", "borders",
        "bordered", "hosts", "hosted", "produces", "produced", "makes",
        "made",
    };
    return v;
}

const std::set<std::string>& anchor_words() {
    static const std::set<std::string> a = {
        "for", "of", "in", "on", "at", "to", "as", "with", "by", "from",
        "into", "near", "under", "over", "is", "are", "was", "were",
        "includes", "include", "included",
    };
    return a;
}

bool is_verb(const std::string& w) { return verb_words().count(lower(strip_punct(w))) > 0; }
bool is_anchor(const std::string& w) { return anchor_words().count(lower(strip_punct(w))) > 0; }

struct Sentence {
    std::string text;  // trimmed slice of the document
    size_t start = 0;
    size_t end = 0;  // one past the last char
};

std::vector<Sentence> split_sentences(const std::string& doc) {
    std::vector<Sentence> out;
    size_t begin = 0;
    size_t i = 0;
    auto flush = [&](size_t end_excl) {
        size_t a = begin;
        while (a < end_excl && std::isspace(static_cast<unsigned char>(doc[a]))) ++a;
        size_t b = end_excl;
        while (b > a && std::isspace(static_cast<unsigned char>(doc[b - 1]))) --b;
        if (b > a) out.push_back({doc.substr(a, b - a), a, b});
        begin = end_excl;
    };
    while (i < doc.size()) {
        char c = doc[i];
        if (c == '.' || c == '!' || c == '?') {
            size_t j = i + 1;
            while (j < doc.size() && (doc[j] == '.' || doc[j] == '!' || doc[j] == '?' ||
                                      doc[j] == '"' || doc[j] == '\''))
                ++j;
            if (j >= doc.size() || std::isspace(static_cast<unsigned char>(doc[j]))) {
                flush(j);
                i = j;
                continue;
            }
        }
        ++i;
    }
    flush(doc.size());
    return out;
}

std::string join_tokens(const std::vector<Token>& toks, size_t from, size_t to_excl) {
    std::string out;
    for (size_t i = from; i < to_excl; ++i) {
        if (!out.empty()) out += " ";
        out += toks[i].text;
    }
    return out;
}

std::string rstrip_commas(std::string s) {
    while (!s.empty() && (s.back() == ',' || s.back() == ' ')) s.pop_back();
    return s;
}

// Splits one sentence into coordinated items. Returns the item texts; the
// caller attaches spans. Falls back to the whole sentence when the structure
// is not recognized.
std::vector<std::string> split_coordination(const std::string& sentence) {
    std::vector<Token> toks = word_tokens(sentence);
    std::string terminal;
    if (!sentence.empty() &&
        (sentence.back() == '.' || sentence.back() == '!' || sentence.back() == '?'))
        terminal = std::string(1, sentence.back());

    // segment boundaries at standalone "and"
    std::vector<size_t> and_pos;
    for (size_t i = 0; i < toks.size(); ++i)
        if (lower(strip_punct(toks[i].text)) == "and" &&
            strip_punct(toks[i].text).size() == 3)
            and_pos.push_back(i);
    if (and_pos.empty()) return {sentence};

    // token ranges between "and"s
    std::vector<std::pair<size_t, size_t>> segs;
    size_t prev = 0;
    for (size_t p : and_pos) {
        segs.emplace_back(prev, p);
        prev = p + 1;
    }
    segs.emplace_back(prev, toks.size());
    for (auto& [a, b] : segs)
        if (a >= b) return {sentence};  // dangling coordinator

    // subject = head-segment tokens before its first verb
    size_t verb_at = segs[0].second;
    for (size_t i = segs[0].first; i < segs[0].second; ++i) {
        if (is_verb(toks[i].text)) {
            verb_at = i;
            break;
        }
    }
    if (verb_at == segs[0].second || verb_at == 0) return {sentence};
    std::string subject = join_tokens(toks, 0, verb_at);

    auto strip_terminal = [&](std::string s) {
        if (!terminal.empty() && !s.empty() && s.back() == terminal[0]) s.pop_back();
        return rstrip_commas(s);
    };

    std::vector<std::string> items;
    auto emit = [&](std::string body) {
        body = strip_terminal(std::move(body));
        if (body.empty()) return;
        items.push_back(body + terminal);
    };

    // Noun-phrase conjuncts share the head segment's prefix up to its last
    // anchor word (at minimum the verb itself); predicate conjuncts get the
    // subject copied instead.
    size_t anchor_at = verb_at;
    for (size_t i = verb_at + 1; i < segs[0].second; ++i) {
        if (is_anchor(toks[i].text)) anchor_at = i;
    }
    std::string shared_prefix = join_tokens(toks, 0, anchor_at + 1);

    // comma lists inside the head's object region become separate items
    std::vector<std::string> head_conjuncts;
    {
        std::string region = join_tokens(toks, anchor_at + 1, segs[0].second);
        std::istringstream ss(region);
        std::string chunk;
        while (std::getline(ss, chunk, ',')) {
            size_t a = chunk.find_first_not_of(' ');
            if (a == std::string::npos) continue;
            size_t b = chunk.find_last_not_of(' ');
            head_conjuncts.push_back(chunk.substr(a, b - a + 1));
        }
    }

    if (head_conjuncts.size() > 1) {
        for (const auto& c : head_conjuncts) emit(shared_prefix + " " + c);
    } else {
        emit(join_tokens(toks, segs[0].first, segs[0].second));
    }

    for (size_t s = 1; s < segs.size(); ++s) {
        std::string seg_text = join_tokens(toks, segs[s].first, segs[s].second);
        bool has_verb = false;
        for (size_t i = segs[s].first; i < segs[s].second; ++i)
            if (is_verb(toks[i].text)) {
                has_verb = true;
                break;
            }
        emit(has_verb ? subject + " " + seg_text : shared_prefix + " " + seg_text);
    }
    if (items.size() < 2) return {sentence};
    return items;
}

}  // namespace

const char* conflict_label_name(ConflictLabel label) {
    switch (label) {
        case ConflictLabel::unknown: return "unknown";
        case ConflictLabel::aligned: return "aligned";
        case ConflictLabel::conflicting: return "conflicting";
    }
    return "unknown";
}

ConflictLabel conflict_label_from_string(const std::string& s) {
    if (s == "aligned") return ConflictLabel::aligned;
    if (s == "conflicting") return ConflictLabel::conflicting;
    if (s == "unknown") return ConflictLabel::unknown;
    throw Error(ErrorKind::parse, "unknown conflict label '" + s + "'");
}

void DecomposerSpec::validate() const {
    if (kind == DecomposerKind::llm_service && endpoint.empty())
        throw Error(ErrorKind::config, "llm_service decomposer requires an endpoint");
    if (max_items == 0)
        throw Error(ErrorKind::config, "decomposer max_items must be >= 1");
}

std::string default_resource_path(const std::string& filename) {
    const char* env = std::getenv("CLEAR_RESOURCE_DIR");
    std::string dir = env && *env ? env : CLEAR_RESOURCE_DIR;
    return dir + "/" + filename;
}

const std::vector<std::string>& stopword_list() {
    static const std::vector<std::string> words = [] {
        std::string path = default_resource_path("stopwords.txt");
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::config, "cannot open stopword list: " + path);
        std::vector<std::string> out;
        std::string w;
        while (std::getline(in, w)) {
            while (!w.empty() && (w.back() == '\r' || w.back() == ' ')) w.pop_back();
            if (!w.empty()) out.push_back(w);
        }
        return out;
    }();
    return words;
}

std::vector<std::string> content_words(const std::string& text) {
    static const std::set<std::string>* stop = nullptr;
    if (!stop) {
        auto* s = new std::set<std::string>(stopword_list().begin(), stopword_list().end());
        stop = s;
    }
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty() && !stop->count(cur)) out.push_back(cur);
        cur.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();
    return out;
}

std::vector<KnowledgeItem> rule_decompose(const std::string& document) {
    std::string trimmed = document;
    if (trimmed.find_first_not_of(" \t\r\n") == std::string::npos)
        throw Error(ErrorKind::contract, "rule_decompose: empty document");

    std::vector<KnowledgeItem> items;
    for (const Sentence& sent : split_sentences(document)) {
        for (const std::string& text : split_coordination(sent.text)) {
            KnowledgeItem item;
            item.id = items.size();
            item.text = text;
            item.source_span = std::make_pair(sent.start, sent.end);
            items.push_back(std::move(item));
        }
    }
    return items;
}

std::string render_decomposition_prompt(const std::string& document,
                                        const std::string& template_path) {
    if (document.empty())
        throw Error(ErrorKind::contract, "render_decomposition_prompt: empty document");
    std::string path =
        template_path.empty() ? default_resource_path("decompose_prompt.txt") : template_path;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open prompt template: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string tmpl = buf.str();

    const std::string placeholder = "{context}";
    size_t first = tmpl.find(placeholder);
    if (first == std::string::npos)
        throw Error(ErrorKind::config,
                    "prompt template missing {context} placeholder: " + path);
    if (tmpl.find(placeholder, first + 1) != std::string::npos)
        throw Error(ErrorKind::config,
                    "prompt template has multiple {context} placeholders: " + path);
    return tmpl.replace(first, placeholder.size(), document);
}

std::vector<std::string> parse_decomposition_reply(const std::string& reply) {
    std::vector<std::string> out;
    std::istringstream ss(reply);
    std::string line;
    while (std::getline(ss, line)) {
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r");
        std::string s = line.substr(a, b - a + 1);
        // strip "1." / "1)" / "-" / "*" list prefixes
        size_t i = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
            ++i;
        } else if (!s.empty() && (s[0] == '-' || s[0] == '*')) {
            i = 1;
        } else {
            i = 0;
        }
        while (i < s.size() && s[i] == ' ') ++i;
        s = s.substr(i);
        if (!s.empty()) out.push_back(s);
    }
    return out;
}

std::vector<KnowledgeItem> decompose_context(const std::string& document,
                                             const DecomposerSpec& spec) {
    spec.validate();
    if (document.find_first_not_of(" \t\r\n") == std::string::npos)
        throw Error(ErrorKind::contract, "decompose_context: empty document");

    std::vector<KnowledgeItem> items;
    if (spec.kind == DecomposerKind::rule_based) {
        items = rule_decompose(document);
    } else {
        ChatClient client(spec.endpoint, spec.model);
        std::string prompt =
            render_decomposition_prompt(document, spec.prompt_template_path);
        std::string reply = client.complete(
            "You split passages into atomic factual statements.", prompt);
        std::vector<std::string> texts = parse_decomposition_reply(reply);
        if (texts.empty())
            throw Error(ErrorKind::service,
                        "decomposition service returned no items; raw payload: " + reply);
        for (const auto& t : texts) {
            KnowledgeItem item;
            item.id = items.size();
            item.text = t;
            items.push_back(std::move(item));
        }
    }
    if (items.empty())
        throw Error(ErrorKind::data, "decomposition produced no items");
    if (items.size() > spec.max_items) {
        std::cerr << "[clear] warning: decomposition produced " << items.size()
                  << " items, truncating to " << spec.max_items << "\n";
        items.resize(spec.max_items);
    }
    return items;
}

}  // namespace clear
