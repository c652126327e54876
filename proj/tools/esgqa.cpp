#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "esgqa/bench.hpp"
#include "esgqa/chunking.hpp"
#include "esgqa/errors.hpp"
#include "esgqa/industry_classifier.hpp"
#include "esgqa/ingest.hpp"
#include "esgqa/qa_evaluation.hpp"
#include "esgqa/qa_generation.hpp"
#include "esgqa/qa_pipelines.hpp"
#include "esgqa/qa_postprocess.hpp"
#include "esgqa/replay_cache.hpp"
#include "esgqa/retrieval.hpp"
#include "esgqa/util.hpp"

namespace fs = std::filesystem;
using namespace esgqa;
using json = nlohmann::json;

namespace {

struct Globals {
    std::string config_path;
    std::string provider;
    std::string cache_dir;
    std::string cache_mode;
    std::string pipeline;
    std::size_t parallelism = 0;
    bool verbose = false;
};

struct Context {
    bench::AppConfig cfg;
    std::shared_ptr<llm::Backend> backend;
    std::unique_ptr<llm::Provider> provider;

    void report_cache() const
    {
        if (auto* c = dynamic_cast<llm::ReplayCache*>(backend.get())) {
            const auto s = c->stats();
            spdlog::info("replay cache: {} hits, {} misses, {} live calls", s.hits, s.misses, s.live_calls);
        }
    }
    std::optional<llm::CacheStats> cache_stats() const
    {
        if (auto* c = dynamic_cast<llm::ReplayCache*>(backend.get())) return c->stats();
        return std::nullopt;
    }
};

Context open(const Globals& g)
{
    Context ctx;
    if (!g.config_path.empty()) ctx.cfg = bench::AppConfig::load(g.config_path);
    ctx.cfg.apply_env();
    if (!g.provider.empty()) ctx.cfg.provider.kind = g.provider;
    if (!g.cache_dir.empty()) ctx.cfg.provider.cache_dir = g.cache_dir;
    if (!g.cache_mode.empty()) ctx.cfg.provider.cache_mode = llm::cache_mode_from_string(g.cache_mode);
    if (!g.pipeline.empty()) ctx.cfg.pipeline.variant = pipe::variant_from_string(g.pipeline);
    if (g.parallelism) ctx.cfg.pipeline.parallelism = g.parallelism;
    ctx.backend = bench::make_backend(ctx.cfg.provider);
    ctx.provider = std::make_unique<llm::Provider>(ctx.backend);
    return ctx;
}

std::set<int> parse_pages(const std::string& csv)
{
    std::set<int> out;
    for (const auto& p : split(csv, ',')) {
        const auto t = trim(p);
        if (!t.empty()) out.insert(std::stoi(t));
    }
    return out;
}

Eigen::VectorXd to_vector(const json& x)
{
    const auto v = x.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

cls::LabelSet to_labels(const json& j) { return j.get<cls::LabelSet>(); }

retrieval::VectorIndex load_or_build_index(const Context& ctx, const std::string& index_dir,
                                           const std::vector<ingest::IndustryDoc>& corpus)
{
    if (!index_dir.empty() && fs::exists(fs::path(index_dir) / "meta.jsonl"))
        return retrieval::VectorIndex::load(index_dir);
    return pipe::build_index(corpus, ctx.cfg.pipeline.effective().chunking, *ctx.provider);
}

/// The answerer for the configured variant plus the objects it borrows.
struct AnswererBundle {
    retrieval::VectorIndex index;
    std::unique_ptr<cls::LlmClassifier> classifier;
    std::unique_ptr<pipe::Answerer> answerer;
};

std::unique_ptr<AnswererBundle> make_answerer(const Context& ctx, const std::vector<ingest::IndustryDoc>& corpus,
                                              const std::string& index_dir)
{
    auto b = std::make_unique<AnswererBundle>();
    const auto cfg = ctx.cfg.pipeline.effective();
    if (cfg.variant != pipe::Variant::LlmPipeline) b->index = load_or_build_index(ctx, index_dir, corpus);
    if (cfg.variant != pipe::Variant::Baseline)
        b->classifier = std::make_unique<cls::LlmClassifier>(*ctx.provider, cls::industry_descriptions(corpus));
    switch (cfg.variant) {
    case pipe::Variant::Baseline: b->answerer = std::make_unique<pipe::BaselineRag>(*ctx.provider, b->index, cfg); break;
    case pipe::Variant::CustomRag:
        b->answerer = std::make_unique<pipe::CustomRag>(*ctx.provider, b->index, *b->classifier, cfg);
        break;
    case pipe::Variant::LlmPipeline:
        b->answerer = std::make_unique<pipe::LlmPipeline>(*ctx.provider, corpus, *b->classifier, cfg);
        break;
    }
    return b;
}

fs::path dataset_file(const std::string& path)
{
    const fs::path p(path);
    return fs::is_directory(p) ? p / "qa_pairs.jsonl" : p;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ESG reporting QA toolkit: ingestion, dataset generation, RAG pipelines and benchmarking"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON config (provider, pipeline, thresholds)");
    app.add_option("--provider", g.provider, "mock | openai");
    app.add_option("--cache-dir", g.cache_dir, "Replay cache directory");
    app.add_option("--cache-mode", g.cache_mode, "readwrite | replay");
    app.add_option("--pipeline", g.pipeline, "baseline | custom_rag | llm_pipeline");
    app.add_option("--parallelism", g.parallelism, "Concurrent provider calls");
    app.add_flag("-v,--verbose", g.verbose);

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Convert page images (or a PDF) of one report to markdown");
    std::string pages_dir, pdf, industry_id, title, industry_name, archive, ingest_out, vision_model = "gpt-4o";
    double zoom = 2.5;
    std::string rasterizer = ingest::kDefaultRasterizer;
    ingest_cmd->add_option("--pages", pages_dir, "Directory of page-N.png images");
    ingest_cmd->add_option("--pdf", pdf, "PDF to rasterize first");
    ingest_cmd->add_option("--rasterizer", rasterizer, "Command template with {pdf} {out} {zoom} {dpi}");
    ingest_cmd->add_option("--zoom", zoom);
    ingest_cmd->add_option("--industry-id", industry_id)->required();
    ingest_cmd->add_option("--title", title);
    ingest_cmd->add_option("--industry-name", industry_name);
    ingest_cmd->add_option("--archive-pages", archive, "Comma-separated boilerplate page numbers");
    ingest_cmd->add_option("--model", vision_model);
    ingest_cmd->add_option("--out", ingest_out, "Corpus directory")->required();

    // chunk
    auto* chunk_cmd = app.add_subcommand("chunk", "Chunk a markdown corpus");
    std::string corpus_dir, chunk_out, strategy;
    std::size_t window = 0;
    chunk_cmd->add_option("--corpus", corpus_dir)->required();
    chunk_cmd->add_option("--strategy", strategy, "Overrides the configured chunking strategy");
    chunk_cmd->add_option("--size", window, "Window size in tokens");
    chunk_cmd->add_option("--out", chunk_out, "chunks.jsonl")->required();

    // index
    auto* index_cmd = app.add_subcommand("index", "Embed chunks into a vector index");
    std::string chunks_in, index_out;
    index_cmd->add_option("--chunks", chunks_in, "chunks.jsonl")->required();
    index_cmd->add_option("--out", index_out, "Index directory")->required();

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "Generate, evaluate and post-process a QA dataset");
    std::string plan_path, gen_out;
    std::size_t per_type = 1;
    gen_cmd->add_option("--corpus", corpus_dir)->required();
    gen_cmd->add_option("--plan", plan_path, "Generation plan JSON");
    gen_cmd->add_option("--per-type", per_type, "Questions per type when no plan is given");
    gen_cmd->add_option("--out", gen_out, "Dataset directory")->required();

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Score QA pairs with the judge models");
    std::string pairs_in, eval_out;
    eval_cmd->add_option("--corpus", corpus_dir)->required();
    eval_cmd->add_option("--pairs", pairs_in, "qa_pairs.jsonl or dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "scores.jsonl")->required();

    // postprocess
    auto* post_cmd = app.add_subcommand("postprocess", "Improve, generalise, SBA-check and de-duplicate scored pairs");
    std::string scores_in, post_out;
    post_cmd->add_option("--corpus", corpus_dir)->required();
    post_cmd->add_option("--pairs", pairs_in)->required();
    post_cmd->add_option("--scores", scores_in)->required();
    post_cmd->add_option("--out", post_out, "Output directory")->required();

    // classify
    auto* cls_cmd = app.add_subcommand("classify", "Industry classification");
    cls_cmd->require_subcommand(1);
    auto* cls_train = cls_cmd->add_subcommand("train", "Train the MLP on {x, labels} JSONL rows");
    auto* cls_predict = cls_cmd->add_subcommand("predict", "Predict with a trained MLP; scores rows that carry labels");
    auto* cls_llm = cls_cmd->add_subcommand("llm", "Classify a question with the LLM classifier");
    std::string train_data, model_path, predict_data, predict_out, question;
    cls::MlpConfig mlp;
    cls_train->add_option("--data", train_data)->required();
    cls_train->add_option("--model", model_path, "Output model file")->required();
    cls_train->add_option("--epochs", mlp.epochs);
    cls_train->add_option("--lr", mlp.learning_rate);
    cls_train->add_option("--batch", mlp.batch_size);
    cls_train->add_option("--seed", mlp.seed);
    cls_predict->add_option("--data", predict_data)->required();
    cls_predict->add_option("--model", model_path)->required();
    cls_predict->add_option("--out", predict_out);
    cls_llm->add_option("--corpus", corpus_dir)->required();
    cls_llm->add_option("--query", question)->required();

    // export-ft
    auto* ft_cmd = app.add_subcommand("export-ft", "Export MCQs as prompt/completion fine-tuning records");
    std::string ft_out;
    ft_cmd->add_option("--pairs", pairs_in)->required();
    ft_cmd->add_option("--out", ft_out)->required();

    // ask
    auto* ask_cmd = app.add_subcommand("ask", "Answer one question through a pipeline");
    std::string index_dir;
    ask_cmd->add_option("--corpus", corpus_dir)->required();
    ask_cmd->add_option("--index", index_dir, "Index directory (built on the fly when absent)");
    ask_cmd->add_option("--query", question)->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Benchmark a pipeline over a QA dataset");
    std::string dataset, bench_out, run_id = "run";
    bench_cmd->add_option("--dataset", dataset, "qa_pairs.jsonl or dataset directory")->required();
    bench_cmd->add_option("--corpus", corpus_dir)->required();
    bench_cmd->add_option("--index", index_dir);
    bench_cmd->add_option("--run-id", run_id);
    bench_cmd->add_option("--out", bench_out, "report.json; report.md and answers.jsonl go beside it")->required();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (ingest_cmd->parsed()) {
            auto ctx = open(g);
            std::vector<ingest::PageImage> pages;
            if (!pdf.empty())
                pages = ingest::rasterize_pdf(pdf, fs::path(ingest_out) / (industry_id + "-pages"), zoom, rasterizer);
            else if (!pages_dir.empty())
                pages = ingest::load_page_images(pages_dir, zoom);
            else
                throw PreconditionError("ingest needs --pages or --pdf");
            ingest::PageProcessor proc(*ctx.provider, vision_model);
            ingest::IngestOptions opts{industry_id, title, industry_name, parse_pages(archive),
                                       ctx.cfg.pipeline.parallelism};
            auto res = ingest::ingest_pages(proc, pages, opts);
            for (const auto& w : res.warnings) spdlog::warn("{}", w);
            ingest::save_doc(res.doc, ingest_out);
            std::cout << (fs::path(ingest_out) / (industry_id + ".md")).string() << "\n";
            ctx.report_cache();
        } else if (chunk_cmd->parsed()) {
            auto ctx = open(g);
            auto spec = ctx.cfg.pipeline.chunking;
            if (!strategy.empty()) spec.strategy = chunking::strategy_from_string(strategy);
            if (window) spec.window_size = window;
            spec.validate();
            std::vector<chunking::Chunk> all;
            for (const auto& doc : ingest::load_corpus(corpus_dir)) {
                auto c = chunking::chunk_document(doc, spec, ctx.provider.get());
                all.insert(all.end(), c.begin(), c.end());
            }
            chunking::write_chunks(chunk_out, all);
            std::cout << all.size() << " chunks\n";
        } else if (index_cmd->parsed()) {
            auto ctx = open(g);
            auto chunks = chunking::read_chunks(chunks_in);
            std::vector<std::string> texts;
            for (const auto& c : chunks) texts.push_back(c.text);
            const auto vecs = ctx.provider->embed(texts);
            for (std::size_t i = 0; i < chunks.size(); ++i) chunks[i].embedding = vecs[i];
            retrieval::VectorIndex index;
            index.upsert(chunks);
            index.save(index_out);
            std::cout << index.size() << " vectors\n";
            ctx.report_cache();
        } else if (gen_cmd->parsed()) {
            auto ctx = open(g);
            const auto corpus = ingest::load_corpus(corpus_dir);
            gen::GenerationPlan plan;
            if (!plan_path.empty()) {
                plan = gen::GenerationPlan::from_json(json::parse(read_file(plan_path)));
            } else {
                plan.per_type = per_type;
                plan.thresholds = ctx.cfg.thresholds;
                plan.parallelism = ctx.cfg.pipeline.parallelism;
            }
            if (plan.industry_pairs.empty() && corpus.size() >= 2)
                plan.industry_pairs = gen::pairs_from_groups(gen::pair_industries(corpus, *ctx.provider));
            gen::QAGenerator generator(*ctx.provider, {ctx.cfg.generator_model, ctx.cfg.seed});
            eval::Evaluator evaluator(*ctx.provider, {ctx.cfg.judge_model, 0.0});
            post::PostProcessor post(*ctx.provider, {ctx.cfg.judge_model, 0.0}, plan.thresholds);
            auto res = gen::run_generation_pipeline(plan, corpus, {generator, evaluator, post, *ctx.provider});
            gen::write_dataset(gen_out, res);
            write_file(fs::path(gen_out) / "plan.json", plan.to_json().dump(2) + "\n");
            std::cout << res.accepted.size() << " accepted, " << res.discarded << " discarded, " << res.failed
                      << " failed\n";
            ctx.report_cache();
        } else if (eval_cmd->parsed()) {
            auto ctx = open(g);
            const auto corpus = ingest::load_corpus(corpus_dir);
            const auto pairs = qa::read_pairs(dataset_file(pairs_in).string());
            eval::Evaluator evaluator(*ctx.provider, {ctx.cfg.judge_model, 0.0});
            const auto scores = eval::evaluate_all(evaluator, pairs, corpus, ctx.cfg.pipeline.parallelism);
            eval::write_scores(eval_out, scores);
            std::cout << scores.size() << " scored\n";
            ctx.report_cache();
        } else if (post_cmd->parsed()) {
            auto ctx = open(g);
            const auto corpus = ingest::load_corpus(corpus_dir);
            auto pairs = qa::read_pairs(dataset_file(pairs_in).string());
            const auto scores = eval::read_scores(scores_in);
            std::map<std::string, eval::EvalScores> by_id;
            for (const auto& s : scores) by_id[s.qa_id] = s;
            eval::Evaluator evaluator(*ctx.provider, {ctx.cfg.judge_model, 0.0});
            post::PostProcessor post(*ctx.provider, {ctx.cfg.judge_model, 0.0}, ctx.cfg.thresholds);
            std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.qa_id < b.qa_id; });

            std::vector<qa::QAPair> kept;
            std::vector<json> audit, improvements;
            for (auto q : pairs) {
                json row = {{"qa_id", q.qa_id}};
                auto it = by_id.find(q.qa_id);
                if (it == by_id.end() || it->second.excluded()) {
                    row["outcome"] = it == by_id.end() ? "unscored" : "reference_gate";
                    audit.push_back(row);
                    continue;
                }
                const auto docs = eval::docs_for(q, corpus);
                if (!post::weak_metrics(it->second, ctx.cfg.thresholds.for_span(q.span)).empty()) {
                    auto imp = post.improve(q, it->second, docs, evaluator);
                    improvements.push_back(imp.record.to_json());
                    if (imp.record.outcome != post::ImproveOutcome::Improved) {
                        row["outcome"] = post::to_string(imp.record.outcome);
                        audit.push_back(row);
                        continue;
                    }
                    q = imp.question;
                }
                try {
                    if (auto gq = post.generalise(q, docs)) q = *gq;
                } catch (const RewriteScopeViolation& e) {
                    spdlog::info("{}: {}", q.qa_id, e.what());
                }
                if (q.format == qa::Format::Mcq) {
                    const auto sba = post.sba_check(q, docs);
                    if (!sba.pass) {
                        row["outcome"] = "sba_" + sba.reason;
                        audit.push_back(row);
                        continue;
                    }
                }
                row["outcome"] = "kept";
                audit.push_back(row);
                kept.push_back(q);
            }
            std::vector<std::string> dropped;
            kept = post::similarity_filter(kept, post::kSimilarityThreshold, *ctx.provider, &dropped);
            for (auto& row : audit)
                if (std::find(dropped.begin(), dropped.end(), row["qa_id"].get<std::string>()) != dropped.end())
                    row["outcome"] = "similar";
            fs::create_directories(post_out);
            qa::write_pairs((fs::path(post_out) / "qa_pairs.jsonl").string(), kept);
            write_jsonl(fs::path(post_out) / "postprocess_audit.jsonl", audit);
            write_jsonl(fs::path(post_out) / "improvements.jsonl", improvements);
            std::cout << kept.size() << " kept of " << pairs.size() << "\n";
            ctx.report_cache();
        } else if (cls_train->parsed()) {
            std::vector<cls::Example> examples;
            for (const auto& row : read_jsonl(train_data)) examples.push_back({to_vector(row.at("x")), to_labels(row.at("labels"))});
            auto res = cls::mlp_train(examples, mlp);
            res.model.save(model_path);
            std::cout << "final loss " << res.loss_trace.back() << "\n";
        } else if (cls_predict->parsed()) {
            const auto model = cls::MlpModel::load(model_path);
            std::vector<cls::LabelSet> preds, truths;
            std::vector<json> out;
            for (const auto& row : read_jsonl(predict_data)) {
                preds.push_back(cls::mlp_predict(model, to_vector(row.at("x"))));
                out.push_back({{"labels", preds.back()}});
                if (row.contains("labels")) truths.push_back(to_labels(row.at("labels")));
            }
            if (!predict_out.empty()) write_jsonl(predict_out, out);
            if (truths.size() == preds.size() && !truths.empty()) {
                const std::set<std::string> universe(model.labels().begin(), model.labels().end());
                json m = {{"micro", cls::score(preds, truths, cls::Averaging::Micro, universe).to_json()},
                          {"macro", cls::score(preds, truths, cls::Averaging::Macro, universe).to_json()}};
                std::cout << m.dump(2) << "\n";
            }
        } else if (cls_llm->parsed()) {
            auto ctx = open(g);
            cls::LlmClassifier classifier(*ctx.provider, cls::industry_descriptions(ingest::load_corpus(corpus_dir)));
            std::cout << json(classifier.classify(question)).dump() << "\n";
        } else if (ft_cmd->parsed()) {
            const auto n = pipe::export_finetune_dataset(qa::read_pairs(dataset_file(pairs_in).string()), ft_out);
            std::cout << n << " records\n";
        } else if (ask_cmd->parsed()) {
            auto ctx = open(g);
            const auto corpus = ingest::load_corpus(corpus_dir);
            auto bundle = make_answerer(ctx, corpus, index_dir);
            std::cout << bundle->answerer->answer(question).to_json().dump(2) << "\n";
            ctx.report_cache();
        } else if (bench_cmd->parsed()) {
            auto ctx = open(g);
            const auto corpus = ingest::load_corpus(corpus_dir);
            const auto pairs = qa::read_pairs(dataset_file(dataset).string());
            auto bundle = make_answerer(ctx, corpus, index_dir);
            auto res = bench::run_benchmark(pairs, *bundle->answerer, ctx.cfg.pipeline.effective(),
                                            {ctx.cfg.pipeline.parallelism, run_id});
            res.report.cache = ctx.cache_stats();
            const fs::path out(bench_out);
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            write_file(out, res.report.to_json().dump(2) + "\n");
            fs::path md = out;
            write_file(md.replace_extension(".md"), res.report.to_markdown());
            std::vector<json> rows;
            for (const auto& a : res.graded) rows.push_back(a.to_json());
            write_jsonl(out.parent_path() / "answers.jsonl", rows);
            std::cout << res.report.to_markdown();
            ctx.report_cache();
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
