import logging

# access-log lines are noise at test verbosity
logging.getLogger("logchain.access").setLevel(logging.WARNING)
