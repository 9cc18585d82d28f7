import logging
logging.getLogger(__name__).addHandler(logging.NullHandler())

LOGGER_NAME = __name__
