from groundsearch.analyzer import Analyzer, AnalyzerConfig, Token, analyze, tokenize
