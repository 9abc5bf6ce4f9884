"""Linguistic and news-consumption polarization between online communities."""

__version__ = "0.1.0"

from .align import (AnchorSet, ExperimentConfig, SimilarityReport, TranslationMatrix, TranslationResult,
                    build_anchor_set, disagreed_pairs, learn_translation, load_stopwords,
                    run_polarization_experiment, similarity, translate_word, translate_words)
from .corpus import (StanceCorpus, Tweet, TweetStore, build_stance_corpus, ingest_tweets, subsample_corpus,
                     tokenize, top_k_vocab)
from .embed import EmbedConfig, EmbeddingModel, nearest_neighbors, train_embeddings, vector
from .flow import (ConsumptionProfile, MobilityIndices, RetweetEvent, TransitionModel, build_transitions,
                   mobility_indices, ratio_histogram, relative_entropy, retweet_ratio)
from .stance import (Category, HashtagLexicon, PoliticianRegistry, Stance, combine_dimensions,
                     label_tweet_by_hashtags, label_user_hashtag, label_user_retweet, merge_methods,
                     stance_distribution)
