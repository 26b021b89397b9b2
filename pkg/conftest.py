# reference corpus, not part of the suite
collect_ignore = ["examples"]
